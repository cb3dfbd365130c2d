//! Ingestion of word-vector tables, frame-feature files, and dataset
//! manifests.
//!
//! All loaders are pure given the file contents; the returned structures are
//! immutable and safe to share across threads.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token word vectors, all of one dimension.
#[derive(Debug, Clone)]
pub struct WordTable {
    entries: HashMap<String, Array1<f64>>,
    dim: usize,
}

impl WordTable {
    /// Builds a table from (token, vector) pairs, enforcing unique tokens and
    /// a common dimension. Pair index is reported as a 1-based "line".
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut entries = HashMap::new();
        let mut dim = None;
        for (idx, (token, values)) in pairs.into_iter().enumerate() {
            let line = idx + 1;
            let d = *dim.get_or_insert(values.len());
            if values.len() != d {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: d,
                    found: values.len(),
                });
            }
            if entries.contains_key(&token) {
                return Err(Error::DuplicateToken { line, token });
            }
            entries.insert(token, Array1::from_vec(values));
        }
        match dim {
            Some(d) if d > 0 => Ok(WordTable { entries, dim: d }),
            _ => Err(Error::EmptyWordTable),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&Array1<f64>> {
        self.entries.get(token)
    }
}

/// Loads a word table from the GloVe text layout: one entry per line,
/// `token f1 ... f_dw`, space-separated. The dimension is inferred from the
/// first line.
pub fn load_word_table(path: impl AsRef<Path>) -> Result<WordTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = HashMap::new();
    let mut dim: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| Error::ParseLine {
                line,
                msg: "missing token".into(),
            })?
            .to_string();
        let mut values = Vec::new();
        for field in fields {
            let v: f64 = field.parse().map_err(|_| Error::ParseLine {
                line,
                msg: format!("unparsable float `{field}`"),
            })?;
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::ParseLine {
                line,
                msg: "no vector components".into(),
            });
        }
        let d = *dim.get_or_insert(values.len());
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                line,
                expected: d,
                found: values.len(),
            });
        }
        if entries.contains_key(&token) {
            return Err(Error::DuplicateToken { line, token });
        }
        entries.insert(token, Array1::from_vec(values));
    }
    match dim {
        Some(d) => Ok(WordTable { entries, dim: d }),
        None => Err(Error::EmptyWordTable),
    }
}

fn validate_rows(rows: &Array2<f64>) -> Result<()> {
    if rows.nrows() == 0 {
        return Err(Error::EmptyMatrixRows);
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue);
    }
    Ok(())
}

/// N word feature vectors of one sentence, in token order (N x d_w).
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceFeatures {
    rows: Array2<f64>,
}

impl SentenceFeatures {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        validate_rows(&rows)?;
        Ok(SentenceFeatures { rows })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Number of tokens N.
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// M video frame feature vectors (M x d_v). Images are one-frame videos.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    rows: Array2<f64>,
}

impl VideoFeatures {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        validate_rows(&rows)?;
        Ok(VideoFeatures { rows })
    }

    /// Builds from per-frame vectors, which must share one dimension.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyMatrixRows);
        }
        let dim = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    context: "frame row length",
                    expected: dim,
                    found: rows[i].len(),
                });
            }
        }
        let n = rows.len();
        let flat: Vec<f64> = rows.concat();
        VideoFeatures::new(Array2::from_shape_vec((n, dim), flat).expect("lengths checked"))
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Number of frames M.
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Looks up each token in the table and stacks the hits in order.
/// Out-of-vocabulary tokens are dropped; a sentence whose tokens are all
/// out-of-vocabulary is an error.
pub fn encode_tokens(table: &WordTable, tokens: &[impl AsRef<str>]) -> Result<SentenceFeatures> {
    let hits: Vec<&Array1<f64>> = tokens
        .iter()
        .filter_map(|t| table.get(t.as_ref()))
        .collect();
    if hits.is_empty() {
        return Err(Error::EmptySentence);
    }
    let mut rows = Array2::zeros((hits.len(), table.dim()));
    for (mut row, hit) in rows.axis_iter_mut(Axis(0)).zip(&hits) {
        row.assign(hit);
    }
    SentenceFeatures::new(rows)
}

/// Keeps frame rows at indices 0, stride, 2*stride, ...
pub fn subsample_frames(frames: &VideoFeatures, stride: usize) -> Result<VideoFeatures> {
    if stride == 0 {
        return Err(Error::InvalidStride);
    }
    let kept: Vec<usize> = (0..frames.len()).step_by(stride).collect();
    let rows = frames.rows().select(Axis(0), &kept);
    VideoFeatures::new(rows)
}

const VFEA_MAGIC: &[u8; 4] = b"VFEA";

/// Reads a VFEA frame-feature file: magic `VFEA`, u32 LE row count, u32 LE
/// dimension, then row-major f32 LE payload.
pub fn load_video_features(path: impl AsRef<Path>) -> Result<VideoFeatures> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != VFEA_MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if rows == 0 || dim == 0 {
        return Err(Error::EmptyMatrix {
            path: path.into(),
            rows,
            dim,
        });
    }
    let expected = 12 + rows as u64 * dim as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let rows = Array2::from_shape_vec((rows as usize, dim as usize), values)
        .expect("payload length checked above");
    VideoFeatures::new(rows)
}

/// Writes a VFEA frame-feature file. Values are stored as f32; reloading a
/// written file yields a bit-identical matrix whenever the values are
/// representable in f32 (which holds for everything this crate reads).
pub fn write_video_features(path: impl AsRef<Path>, features: &VideoFeatures) -> Result<()> {
    let path = path.as_ref();
    let rows = features.rows();
    let mut bytes = Vec::with_capacity(12 + rows.len() * 4);
    bytes.extend_from_slice(VFEA_MAGIC);
    bytes.extend_from_slice(&(rows.nrows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(rows.ncols() as u32).to_le_bytes());
    for &v in rows.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Dataset split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One dataset row: a caption, optionally paired with a frame-feature file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub split: Split,
    pub features: Option<PathBuf>,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub activity_labels: Vec<String>,
    #[serde(default)]
    pub rephrase: bool,
}

/// A validated list of manifest items with unique ids.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn new(items: Vec<ManifestItem>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (idx, item) in items.iter().enumerate() {
            let line = idx + 1;
            if item.tokens.is_empty() {
                return Err(Error::EmptyCaption {
                    line,
                    id: item.id.clone(),
                });
            }
            if !seen.insert(item.id.clone()) {
                return Err(Error::DuplicateId {
                    line,
                    id: item.id.clone(),
                });
            }
        }
        Ok(DatasetManifest { items })
    }

    pub fn items(&self) -> &[ManifestItem] {
        &self.items
    }

    pub fn split_items(&self, split: Split) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestItem> {
        self.items.iter().find(|i| i.id == id)
    }
}

#[derive(Deserialize)]
struct RawManifestItem {
    id: String,
    split: String,
    #[serde(default)]
    features: Option<PathBuf>,
    tokens: Vec<String>,
    #[serde(default)]
    activity_labels: Vec<String>,
    #[serde(default)]
    rephrase: bool,
}

/// Loads a line-delimited JSON manifest. Blank lines are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: RawManifestItem =
            serde_json::from_str(raw).map_err(|e| Error::ManifestParse {
                line,
                msg: e.to_string(),
            })?;
        let split = match parsed.split.as_str() {
            "train" => Split::Train,
            "valid" => Split::Valid,
            "test" => Split::Test,
            other => {
                return Err(Error::UnknownSplit {
                    line,
                    value: other.to_string(),
                })
            }
        };
        if parsed.tokens.is_empty() {
            return Err(Error::EmptyCaption {
                line,
                id: parsed.id,
            });
        }
        if !seen.insert(parsed.id.clone()) {
            return Err(Error::DuplicateId {
                line,
                id: parsed.id,
            });
        }
        items.push(ManifestItem {
            id: parsed.id,
            split,
            features: parsed.features,
            tokens: parsed.tokens,
            activity_labels: parsed.activity_labels,
            rephrase: parsed.rephrase,
        });
    }
    Ok(DatasetManifest { items })
}

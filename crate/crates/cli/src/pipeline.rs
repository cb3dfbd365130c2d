//! Wiring between manifests on disk and the in-memory training/eval types.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use oemb_core::data::{
    encode_tokens, load_manifest, load_video_features, DatasetManifest, ManifestItem, Split,
    VideoFeatures, WordTable,
};
use oemb_core::eval::McInstance;
use oemb_core::mctest::McQuestion;
use oemb_core::trainer::TrainSample;

fn feature_path(manifest_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}

fn load_features_of(item: &ManifestItem, manifest_dir: &Path) -> Result<VideoFeatures> {
    let rel = item
        .features
        .as_deref()
        .with_context(|| format!("item `{}` has no feature file", item.id))?;
    load_video_features(feature_path(manifest_dir, rel))
        .with_context(|| format!("item `{}`", item.id))
}

/// Loads the manifest's `split` rows that carry feature files, encoding each
/// caption against the word table. Captions that lose every token to the
/// vocabulary are skipped with a warning on stderr.
pub fn assemble_pairs(
    manifest_path: &Path,
    table: &WordTable,
    split: Split,
) -> Result<Vec<(String, TrainSample)>> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    let mut skipped_oov = 0usize;
    for item in manifest.split_items(split) {
        if item.features.is_none() {
            continue;
        }
        let caption = match encode_tokens(table, &item.tokens) {
            Ok(c) => c,
            Err(oemb_core::Error::EmptySentence) => {
                skipped_oov += 1;
                continue;
            }
            Err(e) => return Err(e).with_context(|| format!("item `{}`", item.id)),
        };
        let video = load_features_of(item, dir)?;
        pairs.push((item.id.clone(), TrainSample { caption, video }));
    }
    if skipped_oov > 0 {
        eprintln!(
            "warning: skipped {skipped_oov} caption(s) with no in-vocabulary tokens in {}",
            manifest_path.display()
        );
    }
    if pairs.is_empty() {
        bail!(
            "no usable {split} pairs in {} (need rows with feature files)",
            manifest_path.display()
        );
    }
    Ok(pairs)
}

/// Seeded subsample without replacement, preserving manifest order.
pub fn subsample_pairs(
    pairs: Vec<(String, TrainSample)>,
    n: usize,
    seed: u64,
) -> Vec<(String, TrainSample)> {
    if n >= pairs.len() {
        return pairs;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = index_sample(&mut rng, pairs.len(), n).into_iter().collect();
    keep.sort_unstable();
    let mut pairs: Vec<Option<(String, TrainSample)>> = pairs.into_iter().map(Some).collect();
    keep.iter().map(|&i| pairs[i].take().unwrap()).collect()
}

/// Resolves question ids back to features via the manifest.
pub fn resolve_questions(
    questions: &[McQuestion],
    manifest: &DatasetManifest,
    manifest_path: &Path,
    table: &WordTable,
) -> Result<Vec<McInstance>> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let by_id: HashMap<&str, &ManifestItem> =
        manifest.items().iter().map(|i| (i.id.as_str(), i)).collect();
    let item = |id: &str| -> Result<&ManifestItem> {
        by_id
            .get(id)
            .copied()
            .with_context(|| format!("question references unknown id `{id}`"))
    };
    questions
        .iter()
        .map(|q| {
            let video = load_features_of(item(&q.video_id)?, dir)?;
            let choices = q
                .choice_ids
                .iter()
                .map(|id| {
                    encode_tokens(table, &item(id)?.tokens)
                        .with_context(|| format!("caption `{id}`"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(McInstance {
                video,
                choices,
                answer_index: q.answer_index,
            })
        })
        .collect()
}

/// Looks up one video's features by manifest id.
pub fn video_by_id(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    id: &str,
) -> Result<VideoFeatures> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let item = manifest
        .get(id)
        .with_context(|| format!("video id `{id}` not in manifest"))?;
    load_features_of(item, dir)
}

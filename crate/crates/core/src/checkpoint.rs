//! Named-tensor checkpoint files.
//!
//! Binary layout, all integers little-endian: magic `OEMB`, u32 version,
//! u32 tensor count; per tensor: u16 name length, UTF-8 name, u8 rank,
//! u32 per-axis dims, then f32 payload in row-major order. A JSON sidecar
//! at `<path>.json` records `{arch, d_w, d_v, d_e, d_h, d_a}`.
//!
//! Writes are atomic: data goes to a temp file in the same directory which
//! is then renamed over the destination.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::encoders::{AttentionParams, LinearMap, LstmParams};
use crate::error::{Error, Result};
use crate::model::{Arch, ModelParams};

const MAGIC: &[u8; 4] = b"OEMB";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    arch: Arch,
    d_w: usize,
    d_v: usize,
    d_e: usize,
    d_h: Option<usize>,
    d_a: Option<usize>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes `params` to `path` plus a `<path>.json` sidecar.
pub fn save(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    let tensors = params.named_tensors();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, data) in tensors {
        bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.push(dims.len() as u8);
        for d in &dims {
            bytes.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for &v in data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_atomic(path, &bytes)?;

    let dims = params.dims();
    let uses_lstm = params.arch() != Arch::M1;
    let sidecar = Sidecar {
        arch: params.arch(),
        d_w: dims.d_w,
        d_v: dims.d_v,
        d_e: dims.d_e,
        d_h: uses_lstm.then_some(dims.d_e),
        d_a: (params.arch() == Arch::M3).then_some(dims.d_a),
    };
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path(path), &json)
}

struct RawTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointFormat {
                path: self.path.into(),
                msg: format!("unexpected end of file at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

fn read_tensors(path: &Path) -> Result<HashMap<String, RawTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::CheckpointFormat {
            path: path.into(),
            msg: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointFormat {
            path: path.into(),
            msg: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()?;
    let mut out = HashMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CheckpointFormat {
                path: path.into(),
                msg: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let payload = r.take(len * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.insert(name, RawTensor { dims, data });
    }
    Ok(out)
}

fn take2(
    tensors: &mut HashMap<String, RawTensor>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>> {
    let t = tensors.remove(name).ok_or_else(|| Error::MissingTensor {
        name: name.to_string(),
    })?;
    if t.dims != [rows, cols] {
        return Err(Error::DimMismatch {
            context: "checkpoint tensor shape",
            expected: rows * cols,
            found: t.dims.iter().product(),
        });
    }
    Ok(Array2::from_shape_vec((rows, cols), t.data).expect("length matches dims"))
}

fn take1(tensors: &mut HashMap<String, RawTensor>, name: &str, len: usize) -> Result<Array1<f64>> {
    let t = tensors.remove(name).ok_or_else(|| Error::MissingTensor {
        name: name.to_string(),
    })?;
    if t.dims != [len] {
        return Err(Error::DimMismatch {
            context: "checkpoint tensor shape",
            expected: len,
            found: t.dims.iter().product(),
        });
    }
    Ok(Array1::from_vec(t.data))
}

fn take_lstm(tensors: &mut HashMap<String, RawTensor>, d_w: usize, d_h: usize) -> Result<LstmParams> {
    Ok(LstmParams {
        wi: take2(tensors, "lstm.Wi", d_h, d_w)?,
        wf: take2(tensors, "lstm.Wf", d_h, d_w)?,
        wc: take2(tensors, "lstm.Wc", d_h, d_w)?,
        wo: take2(tensors, "lstm.Wo", d_h, d_w)?,
        ui: take2(tensors, "lstm.Ui", d_h, d_h)?,
        uf: take2(tensors, "lstm.Uf", d_h, d_h)?,
        uc: take2(tensors, "lstm.Uc", d_h, d_h)?,
        uo: take2(tensors, "lstm.Uo", d_h, d_h)?,
        bi: take1(tensors, "lstm.bi", d_h)?,
        bf: take1(tensors, "lstm.bf", d_h)?,
        bc: take1(tensors, "lstm.bc", d_h)?,
        bo: take1(tensors, "lstm.bo", d_h)?,
    })
}

/// Loads a checkpoint written by [`save`], validating against its sidecar.
pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let sidecar_file = sidecar_path(path);
    let sidecar_bytes = fs::read(&sidecar_file).map_err(|e| Error::io(&sidecar_file, e))?;
    let sidecar: Sidecar =
        serde_json::from_slice(&sidecar_bytes).map_err(|e| Error::CheckpointFormat {
            path: sidecar_file.clone(),
            msg: format!("bad sidecar: {e}"),
        })?;
    let mut tensors = read_tensors(path)?;
    let (d_w, d_v, d_e) = (sidecar.d_w, sidecar.d_v, sidecar.d_e);
    let params = match sidecar.arch {
        Arch::M1 => ModelParams::M1 {
            w_word: LinearMap::new(take2(&mut tensors, "W_word", d_e, d_w)?)?,
            w_video: LinearMap::new(take2(&mut tensors, "W_video", d_e, d_v)?)?,
        },
        Arch::M2 => ModelParams::M2 {
            lstm: take_lstm(&mut tensors, d_w, d_e)?,
            w_video: LinearMap::new(take2(&mut tensors, "W_video", d_e, d_v)?)?,
        },
        Arch::M3 => {
            let d_a = sidecar.d_a.ok_or_else(|| Error::CheckpointFormat {
                path: path.into(),
                msg: "m3 sidecar must declare d_a".into(),
            })?;
            ModelParams::M3 {
                lstm: take_lstm(&mut tensors, d_w, d_e)?,
                w_video: LinearMap::new(take2(&mut tensors, "W_video", d_e, d_v)?)?,
                attn: AttentionParams {
                    query: take2(&mut tensors, "attn.Q", d_a, d_e)?,
                    key: take2(&mut tensors, "attn.K", d_a, d_v)?,
                    score: take1(&mut tensors, "attn.s", d_a)?,
                },
            }
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::CheckpointFormat {
            path: path.into(),
            msg: format!("unexpected tensor `{name}`"),
        });
    }
    Ok(params)
}

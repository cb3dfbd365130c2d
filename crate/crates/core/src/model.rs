//! Trainable parameter bundles for the three architectures.
//!
//! `ModelParams` doubles as the container for gradients and optimizer
//! moments: those are parameter-shaped tensor bundles, built with
//! [`ModelParams::zeros_like`]. Tensors are exposed as named flat slices in a
//! fixed canonical order so the optimizer, clipping, and the checkpoint
//! writer all agree on layout.

use ndarray::ArrayView1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{AttentionParams, LinearMap, LstmParams};
use crate::error::{Error, Result};

/// Which encoder pair a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Simple-average sentence + simple-average video.
    M1,
    /// LSTM sentence + simple-average video.
    M2,
    /// LSTM sentence + attention-weighted video.
    M3,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::M1 => write!(f, "m1"),
            Arch::M2 => write!(f, "m2"),
            Arch::M3 => write!(f, "m3"),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m1" => Ok(Arch::M1),
            "m2" => Ok(Arch::M2),
            "m3" => Ok(Arch::M3),
            other => Err(Error::UnknownArch {
                value: other.to_string(),
            }),
        }
    }
}

/// Model dimensions. The LSTM hidden size equals the joint space size d_e;
/// d_a is the attention matching dimension and only meaningful for M3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d_w: usize,
    pub d_v: usize,
    pub d_e: usize,
    pub d_a: usize,
}

/// All trainable tensors of one architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    M1 {
        w_word: LinearMap,
        w_video: LinearMap,
    },
    M2 {
        lstm: LstmParams,
        w_video: LinearMap,
    },
    M3 {
        lstm: LstmParams,
        w_video: LinearMap,
        attn: AttentionParams,
    },
}

impl ModelParams {
    pub fn init(arch: Arch, dims: Dims, rng: &mut impl Rng) -> Self {
        match arch {
            Arch::M1 => ModelParams::M1 {
                w_word: LinearMap::glorot(dims.d_e, dims.d_w, rng),
                w_video: LinearMap::glorot(dims.d_e, dims.d_v, rng),
            },
            Arch::M2 => ModelParams::M2 {
                lstm: LstmParams::init(dims.d_w, dims.d_e, rng),
                w_video: LinearMap::glorot(dims.d_e, dims.d_v, rng),
            },
            Arch::M3 => ModelParams::M3 {
                lstm: LstmParams::init(dims.d_w, dims.d_e, rng),
                w_video: LinearMap::glorot(dims.d_e, dims.d_v, rng),
                attn: AttentionParams::init(dims.d_a, dims.d_e, dims.d_v, rng),
            },
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            ModelParams::M1 { .. } => Arch::M1,
            ModelParams::M2 { .. } => Arch::M2,
            ModelParams::M3 { .. } => Arch::M3,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            ModelParams::M1 { w_word, w_video } => Dims {
                d_w: w_word.in_dim(),
                d_v: w_video.in_dim(),
                d_e: w_word.out_dim(),
                d_a: 0,
            },
            ModelParams::M2 { lstm, w_video } => Dims {
                d_w: lstm.d_input(),
                d_v: w_video.in_dim(),
                d_e: lstm.d_hidden(),
                d_a: 0,
            },
            ModelParams::M3 {
                lstm,
                w_video,
                attn,
            } => Dims {
                d_w: lstm.d_input(),
                d_v: w_video.in_dim(),
                d_e: lstm.d_hidden(),
                d_a: attn.d_match(),
            },
        }
    }

    /// A same-shaped bundle of zeros (for gradients and optimizer moments).
    pub fn zeros_like(&self) -> ModelParams {
        let dims = self.dims();
        match self {
            ModelParams::M1 { .. } => ModelParams::M1 {
                w_word: LinearMap::zeros(dims.d_e, dims.d_w),
                w_video: LinearMap::zeros(dims.d_e, dims.d_v),
            },
            ModelParams::M2 { .. } => ModelParams::M2 {
                lstm: LstmParams::zeros(dims.d_w, dims.d_e),
                w_video: LinearMap::zeros(dims.d_e, dims.d_v),
            },
            ModelParams::M3 { .. } => ModelParams::M3 {
                lstm: LstmParams::zeros(dims.d_w, dims.d_e),
                w_video: LinearMap::zeros(dims.d_e, dims.d_v),
                attn: AttentionParams::zeros(dims.d_a, dims.d_e, dims.d_v),
            },
        }
    }

    /// Named tensors with shapes, in canonical order.
    pub fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out: Vec<(&'static str, Vec<usize>, &[f64])> = Vec::new();
        match self {
            ModelParams::M1 { w_word, w_video } => {
                let (d, s) = slice2(w_word.matrix());
                out.push(("W_word", d, s));
                let (d, s) = slice2(w_video.matrix());
                out.push(("W_video", d, s));
            }
            ModelParams::M2 { lstm, w_video } => {
                push_lstm(&mut out, lstm);
                let (d, s) = slice2(w_video.matrix());
                out.push(("W_video", d, s));
            }
            ModelParams::M3 {
                lstm,
                w_video,
                attn,
            } => {
                push_lstm(&mut out, lstm);
                let (d, s) = slice2(w_video.matrix());
                out.push(("W_video", d, s));
                let (d, s) = slice2(&attn.query);
                out.push(("attn.Q", d, s));
                let (d, s) = slice2(&attn.key);
                out.push(("attn.K", d, s));
                let (d, s) = slice1(&attn.score);
                out.push(("attn.s", d, s));
            }
        }
        out
    }

    /// Flat views of every tensor, canonical order.
    pub fn tensor_slices(&self) -> Vec<(&'static str, &[f64])> {
        self.named_tensors()
            .into_iter()
            .map(|(name, _, s)| (name, s))
            .collect()
    }

    /// Flat mutable views of every tensor, canonical order.
    pub fn tensor_slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            ModelParams::M1 { w_word, w_video } => vec![
                ("W_word", mut2(w_word.matrix_mut())),
                ("W_video", mut2(w_video.matrix_mut())),
            ],
            ModelParams::M2 { lstm, w_video } => {
                let mut out = lstm_slices_mut(lstm);
                out.push(("W_video", mut2(w_video.matrix_mut())));
                out
            }
            ModelParams::M3 {
                lstm,
                w_video,
                attn,
            } => {
                let mut out = lstm_slices_mut(lstm);
                out.push(("W_video", mut2(w_video.matrix_mut())));
                out.push(("attn.Q", mut2(&mut attn.query)));
                out.push(("attn.K", mut2(&mut attn.key)));
                out.push(("attn.s", mut1(&mut attn.score)));
                out
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.tensor_slices().iter().map(|(_, s)| s.len()).sum()
    }

    /// Global L2 norm over all tensors.
    pub fn global_norm(&self) -> f64 {
        self.tensor_slices()
            .iter()
            .flat_map(|(_, s)| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn slice1(a: &ndarray::Array1<f64>) -> (Vec<usize>, &[f64]) {
    (vec![a.len()], a.as_slice().expect("standard layout"))
}

fn slice2(a: &ndarray::Array2<f64>) -> (Vec<usize>, &[f64]) {
    (
        vec![a.nrows(), a.ncols()],
        a.as_slice().expect("standard layout"),
    )
}

fn mut1(a: &mut ndarray::Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn mut2(a: &mut ndarray::Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn push_lstm<'a>(out: &mut Vec<(&'static str, Vec<usize>, &'a [f64])>, lstm: &'a LstmParams) {
    let mats: [(&'static str, &ndarray::Array2<f64>); 8] = [
        ("lstm.Wi", &lstm.wi),
        ("lstm.Wf", &lstm.wf),
        ("lstm.Wc", &lstm.wc),
        ("lstm.Wo", &lstm.wo),
        ("lstm.Ui", &lstm.ui),
        ("lstm.Uf", &lstm.uf),
        ("lstm.Uc", &lstm.uc),
        ("lstm.Uo", &lstm.uo),
    ];
    for (name, m) in mats {
        let (d, s) = slice2(m);
        out.push((name, d, s));
    }
    let vecs: [(&'static str, &ndarray::Array1<f64>); 4] = [
        ("lstm.bi", &lstm.bi),
        ("lstm.bf", &lstm.bf),
        ("lstm.bc", &lstm.bc),
        ("lstm.bo", &lstm.bo),
    ];
    for (name, v) in vecs {
        let (d, s) = slice1(v);
        out.push((name, d, s));
    }
}

fn lstm_slices_mut(lstm: &mut LstmParams) -> Vec<(&'static str, &mut [f64])> {
    let LstmParams {
        wi,
        wf,
        wc,
        wo,
        ui,
        uf,
        uc,
        uo,
        bi,
        bf,
        bc,
        bo,
    } = lstm;
    vec![
        ("lstm.Wi", wi.as_slice_mut().expect("standard layout")),
        ("lstm.Wf", wf.as_slice_mut().expect("standard layout")),
        ("lstm.Wc", wc.as_slice_mut().expect("standard layout")),
        ("lstm.Wo", wo.as_slice_mut().expect("standard layout")),
        ("lstm.Ui", ui.as_slice_mut().expect("standard layout")),
        ("lstm.Uf", uf.as_slice_mut().expect("standard layout")),
        ("lstm.Uc", uc.as_slice_mut().expect("standard layout")),
        ("lstm.Uo", uo.as_slice_mut().expect("standard layout")),
        ("lstm.bi", bi.as_slice_mut().expect("standard layout")),
        ("lstm.bf", bf.as_slice_mut().expect("standard layout")),
        ("lstm.bc", bc.as_slice_mut().expect("standard layout")),
        ("lstm.bo", bo.as_slice_mut().expect("standard layout")),
    ]
}

/// Convenience: the unit-norm check used across tests and invariants.
pub fn is_unit_norm(v: ArrayView1<'_, f64>, eps: f64) -> bool {
    (v.dot(&v).sqrt() - 1.0).abs() <= eps
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn canonical_order_is_stable_across_bundles() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let dims = Dims {
            d_w: 3,
            d_v: 4,
            d_e: 5,
            d_a: 2,
        };
        for arch in [Arch::M1, Arch::M2, Arch::M3] {
            let params = ModelParams::init(arch, dims, &mut rng);
            let zeros = params.zeros_like();
            let a: Vec<_> = params.tensor_slices().iter().map(|(n, s)| (*n, s.len())).collect();
            let b: Vec<_> = zeros.tensor_slices().iter().map(|(n, s)| (*n, s.len())).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn m3_exposes_all_tensor_names() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let params = ModelParams::init(
            Arch::M3,
            Dims {
                d_w: 3,
                d_v: 4,
                d_e: 5,
                d_a: 2,
            },
            &mut rng,
        );
        let names: Vec<_> = params.tensor_slices().iter().map(|(n, _)| *n).collect();
        assert_eq!(
            names,
            vec![
                "lstm.Wi", "lstm.Wf", "lstm.Wc", "lstm.Wo", "lstm.Ui", "lstm.Uf", "lstm.Uc",
                "lstm.Uo", "lstm.bi", "lstm.bf", "lstm.bc", "lstm.bo", "W_video", "attn.Q",
                "attn.K", "attn.s",
            ]
        );
    }

    #[test]
    fn init_is_deterministic() {
        let dims = Dims {
            d_w: 3,
            d_v: 4,
            d_e: 5,
            d_a: 2,
        };
        let a = ModelParams::init(Arch::M2, dims, &mut ChaCha12Rng::seed_from_u64(42));
        let b = ModelParams::init(Arch::M2, dims, &mut ChaCha12Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }
}

//! Order-violation similarity and the two ranking losses over minibatches.
//!
//! Similarity of a caption embedding `c` to a video embedding `v` is the
//! negative order-violation penalty `-||max(0, c - v)||^2`: zero exactly when
//! `c` is componentwise dominated by `v`, and asymmetric otherwise.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranking margin hyperparameter (alpha).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin(f64);

impl Margin {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(Error::InvalidMargin { value: alpha });
        }
        Ok(Margin(alpha))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Default for Margin {
    fn default() -> Self {
        Margin(0.05)
    }
}

/// B x B matrix of pair scores, `s[i][j] = S(caption_i, video_j)`, with
/// ground-truth pairs on the diagonal. Entries are nonpositive because the
/// similarity is a negative penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    s: Array2<f64>,
}

impl ScoreMatrix {
    pub fn new(s: Array2<f64>) -> Result<Self> {
        if s.nrows() != s.ncols() {
            return Err(Error::NonSquareScores {
                rows: s.nrows(),
                cols: s.ncols(),
            });
        }
        for ((i, j), &v) in s.indexed_iter() {
            if v > 0.0 {
                return Err(Error::PositiveScore {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        Ok(ScoreMatrix { s })
    }

    pub fn size(&self) -> usize {
        self.s.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.s
    }
}

/// Which ranking loss to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Pairwise,
    Annotation,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Pairwise => write!(f, "pairwise"),
            LossKind::Annotation => write!(f, "annotation"),
        }
    }
}

/// Negative order-violation penalty `-||max(0, c - v)||^2`.
///
/// Always nonpositive; zero iff `c <= v` componentwise. Not symmetric.
pub fn order_similarity(c: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if c.len() != v.len() {
        return Err(Error::DimMismatch {
            context: "order_similarity",
            expected: c.len(),
            found: v.len(),
        });
    }
    let mut penalty = 0.0;
    for (&ci, &vi) in c.iter().zip(v.iter()) {
        let r = (ci - vi).max(0.0);
        penalty += r * r;
    }
    Ok(-penalty)
}

/// Gradient of `order_similarity` with respect to both arguments.
/// Returns (d_c, d_v). The similarity is C1, so this is an ordinary gradient.
pub(crate) fn order_similarity_grad(
    c: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
) -> (Array1<f64>, Array1<f64>) {
    let mut dc = Array1::zeros(c.len());
    let mut dv = Array1::zeros(v.len());
    for k in 0..c.len() {
        let r = (c[k] - v[k]).max(0.0);
        dc[k] = -2.0 * r;
        dv[k] = 2.0 * r;
    }
    (dc, dv)
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Pairwise ranking loss: for every ground-truth pair i, hinges against the
/// other B-1 captions (column direction) and the other B-1 videos (row
/// direction). Sum reduction over the batch.
pub fn pairwise_rank_loss(scores: &ScoreMatrix, margin: &Margin) -> f64 {
    loss_and_grad(scores, margin, LossKind::Pairwise, false).0
}

/// Annotation ranking loss: just the caption-contrast term of the pairwise
/// loss.
pub fn annotation_rank_loss(scores: &ScoreMatrix, margin: &Margin) -> f64 {
    loss_and_grad(scores, margin, LossKind::Annotation, false).0
}

/// Loss value and its subgradient with respect to every score entry.
/// At hinge kinks (argument exactly zero) the subgradient 0 is taken.
pub fn rank_loss_grad(
    scores: &ScoreMatrix,
    margin: &Margin,
    kind: LossKind,
) -> (f64, Array2<f64>) {
    let (loss, grad) = loss_and_grad(scores, margin, kind, true);
    (loss, grad.expect("gradient requested"))
}

/// Loss value only.
pub fn rank_loss(scores: &ScoreMatrix, margin: &Margin, kind: LossKind) -> f64 {
    loss_and_grad(scores, margin, kind, false).0
}

fn loss_and_grad(
    scores: &ScoreMatrix,
    margin: &Margin,
    kind: LossKind,
    with_grad: bool,
) -> (f64, Option<Array2<f64>>) {
    let s = scores.values();
    let b = s.nrows();
    let alpha = margin.value();
    let mut loss = 0.0;
    let mut grad = with_grad.then(|| Array2::zeros((b, b)));
    for i in 0..b {
        let gt = s[[i, i]];
        for j in 0..b {
            if j == i {
                continue;
            }
            // contrastive caption j against video i
            let caption_term = alpha - gt + s[[j, i]];
            loss += hinge(caption_term);
            if caption_term > 0.0 {
                if let Some(g) = grad.as_mut() {
                    g[[i, i]] -= 1.0;
                    g[[j, i]] += 1.0;
                }
            }
            if kind == LossKind::Pairwise {
                // contrastive video j against caption i
                let video_term = alpha - gt + s[[i, j]];
                loss += hinge(video_term);
                if video_term > 0.0 {
                    if let Some(g) = grad.as_mut() {
                        g[[i, i]] -= 1.0;
                        g[[i, j]] += 1.0;
                    }
                }
            }
        }
    }
    (loss, grad)
}

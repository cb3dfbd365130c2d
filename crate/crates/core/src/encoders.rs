//! Sentence and video encoders for the three model architectures.
//!
//! All encoders end in the same projection: absolute value first, then L2
//! normalization, so every embedding is componentwise nonnegative with unit
//! norm. Encoders are pure functions of (params, input); parallel encoding of
//! distinct samples is safe.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::data::{SentenceFeatures, VideoFeatures};
use crate::error::{Error, Result};
use crate::math::{l2_norm, outer_into, sigmoid, softmax, softmax_backward};

/// Pre-normalization norms below this are degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// A point in the joint embedding space: every component >= 0, unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Array1<f64>,
}

impl Embedding {
    /// Projects a raw vector into the joint space (abs, then normalize).
    pub fn project(z: ArrayView1<'_, f64>) -> Result<Embedding> {
        let proj = Projection::new(z.to_owned())?;
        Ok(Embedding { values: proj.out })
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cached projection z -> |z| / ||z||, kept around for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub z: Array1<f64>,
    pub norm: f64,
    pub out: Array1<f64>,
}

impl Projection {
    pub fn new(z: Array1<f64>) -> Result<Projection> {
        let a = z.mapv(f64::abs);
        let norm = l2_norm(a.view());
        if norm < DEGENERATE_NORM {
            return Err(Error::DegenerateEmbedding { norm });
        }
        let out = a / norm;
        Ok(Projection { z, norm, out })
    }
}

/// d(loss)/dz for a cached projection, given d(loss)/d(out).
/// sign(0) is taken as 0.
pub(crate) fn project_backward(proj: &Projection, d_out: ArrayView1<'_, f64>) -> Array1<f64> {
    let dot = d_out.dot(&proj.out);
    let mut dz = Array1::zeros(proj.z.len());
    for k in 0..dz.len() {
        let da = (d_out[k] - dot * proj.out[k]) / proj.norm;
        let sign = if proj.z[k] > 0.0 {
            1.0
        } else if proj.z[k] < 0.0 {
            -1.0
        } else {
            0.0
        };
        dz[k] = da * sign;
    }
    dz
}

/// Dense linear transformation into the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    matrix: Array2<f64>,
}

impl LinearMap {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        Ok(LinearMap { matrix })
    }

    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        LinearMap {
            matrix: glorot_uniform(out_dim, in_dim, rng),
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearMap {
            matrix: Array2::zeros((out_dim, in_dim)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.matrix.dot(&x)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.matrix
    }
}

pub(crate) fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-r..r))
}

/// Single-layer LSTM with forget gate, no peepholes, zero initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub wi: Array2<f64>,
    pub wf: Array2<f64>,
    pub wc: Array2<f64>,
    pub wo: Array2<f64>,
    pub ui: Array2<f64>,
    pub uf: Array2<f64>,
    pub uc: Array2<f64>,
    pub uo: Array2<f64>,
    pub bi: Array1<f64>,
    pub bf: Array1<f64>,
    pub bc: Array1<f64>,
    pub bo: Array1<f64>,
}

impl LstmParams {
    pub fn init(d_input: usize, d_hidden: usize, rng: &mut impl Rng) -> Self {
        let w = |rng: &mut _| glorot_uniform(d_hidden, d_input, rng);
        let u = |rng: &mut _| glorot_uniform(d_hidden, d_hidden, rng);
        LstmParams {
            wi: w(rng),
            wf: w(rng),
            wc: w(rng),
            wo: w(rng),
            ui: u(rng),
            uf: u(rng),
            uc: u(rng),
            uo: u(rng),
            bi: Array1::zeros(d_hidden),
            // forget-gate bias starts open
            bf: Array1::ones(d_hidden),
            bc: Array1::zeros(d_hidden),
            bo: Array1::zeros(d_hidden),
        }
    }

    pub fn zeros(d_input: usize, d_hidden: usize) -> Self {
        LstmParams {
            wi: Array2::zeros((d_hidden, d_input)),
            wf: Array2::zeros((d_hidden, d_input)),
            wc: Array2::zeros((d_hidden, d_input)),
            wo: Array2::zeros((d_hidden, d_input)),
            ui: Array2::zeros((d_hidden, d_hidden)),
            uf: Array2::zeros((d_hidden, d_hidden)),
            uc: Array2::zeros((d_hidden, d_hidden)),
            uo: Array2::zeros((d_hidden, d_hidden)),
            bi: Array1::zeros(d_hidden),
            bf: Array1::zeros(d_hidden),
            bc: Array1::zeros(d_hidden),
            bo: Array1::zeros(d_hidden),
        }
    }

    pub fn d_input(&self) -> usize {
        self.wi.ncols()
    }

    pub fn d_hidden(&self) -> usize {
        self.wi.nrows()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LstmStepTrace {
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub tanh_c: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    pub steps: Vec<LstmStepTrace>,
    pub h_n: Array1<f64>,
}

fn lstm_step_inner(
    params: &LstmParams,
    x: ArrayView1<'_, f64>,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>, LstmStepTrace) {
    let pre = |w: &Array2<f64>, u: &Array2<f64>, b: &Array1<f64>| w.dot(&x) + u.dot(h_prev) + b;
    let i = pre(&params.wi, &params.ui, &params.bi).mapv(sigmoid);
    let f = pre(&params.wf, &params.uf, &params.bf).mapv(sigmoid);
    let g = pre(&params.wc, &params.uc, &params.bc).mapv(f64::tanh);
    let o = pre(&params.wo, &params.uo, &params.bo).mapv(sigmoid);
    let c = &f * c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    let trace = LstmStepTrace {
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    (h, c, trace)
}

/// One step of the LSTM recurrence. Returns (h_t, c_t).
pub fn lstm_step(
    params: &LstmParams,
    x: ArrayView1<'_, f64>,
    h_prev: ArrayView1<'_, f64>,
    c_prev: ArrayView1<'_, f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.len() != params.d_input() {
        return Err(Error::DimMismatch {
            context: "lstm_step input",
            expected: params.d_input(),
            found: x.len(),
        });
    }
    if h_prev.len() != params.d_hidden() || c_prev.len() != params.d_hidden() {
        return Err(Error::DimMismatch {
            context: "lstm_step state",
            expected: params.d_hidden(),
            found: h_prev.len().max(c_prev.len()),
        });
    }
    let h_prev = h_prev.to_owned();
    let c_prev = c_prev.to_owned();
    let (h, c, _) = lstm_step_inner(params, x, &h_prev, &c_prev);
    Ok((h, c))
}

/// Runs the recurrence over the rows of `rows` from zero initial state,
/// keeping the per-step values needed for backpropagation.
pub(crate) fn lstm_forward(params: &LstmParams, rows: &Array2<f64>) -> Result<LstmTrace> {
    if rows.ncols() != params.d_input() {
        return Err(Error::DimMismatch {
            context: "lstm input",
            expected: params.d_input(),
            found: rows.ncols(),
        });
    }
    let d = params.d_hidden();
    let mut h = Array1::zeros(d);
    let mut c = Array1::zeros(d);
    let mut steps = Vec::with_capacity(rows.nrows());
    for x in rows.axis_iter(Axis(0)) {
        let (next_h, next_c, trace) = lstm_step_inner(params, x, &h, &c);
        h = next_h;
        c = next_c;
        steps.push(trace);
    }
    Ok(LstmTrace { steps, h_n: h })
}

/// Backpropagation through time, accumulating parameter gradients into
/// `grads`. `d_h_n` is the loss gradient at the final hidden state.
pub(crate) fn lstm_backward(
    params: &LstmParams,
    rows: &Array2<f64>,
    trace: &LstmTrace,
    d_h_n: ArrayView1<'_, f64>,
    grads: &mut LstmParams,
) {
    let d = params.d_hidden();
    let mut dh = d_h_n.to_owned();
    let mut dc = Array1::<f64>::zeros(d);
    for (t, step) in trace.steps.iter().enumerate().rev() {
        let x = rows.row(t);
        let d_o = &dh * &step.tanh_c;
        let dc_total = &dc + &(&dh * &step.o * step.tanh_c.mapv(|v| 1.0 - v * v));
        let d_i = &dc_total * &step.g;
        let d_g = &dc_total * &step.i;
        let d_f = &dc_total * &step.c_prev;
        let dc_prev = &dc_total * &step.f;
        let dpre_i = d_i * &step.i.mapv(|v| v * (1.0 - v));
        let dpre_f = d_f * &step.f.mapv(|v| v * (1.0 - v));
        let dpre_g = d_g * &step.g.mapv(|v| 1.0 - v * v);
        let dpre_o = d_o * &step.o.mapv(|v| v * (1.0 - v));

        outer_into(&mut grads.wi, dpre_i.view(), x);
        outer_into(&mut grads.wf, dpre_f.view(), x);
        outer_into(&mut grads.wc, dpre_g.view(), x);
        outer_into(&mut grads.wo, dpre_o.view(), x);
        outer_into(&mut grads.ui, dpre_i.view(), step.h_prev.view());
        outer_into(&mut grads.uf, dpre_f.view(), step.h_prev.view());
        outer_into(&mut grads.uc, dpre_g.view(), step.h_prev.view());
        outer_into(&mut grads.uo, dpre_o.view(), step.h_prev.view());
        grads.bi += &dpre_i;
        grads.bf += &dpre_f;
        grads.bc += &dpre_g;
        grads.bo += &dpre_o;

        dh = params.ui.t().dot(&dpre_i)
            + params.uf.t().dot(&dpre_f)
            + params.uc.t().dot(&dpre_g)
            + params.uo.t().dot(&dpre_o);
        dc = dc_prev;
    }
}

/// Additive soft attention over video frames, keyed by the sentence LSTM's
/// final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// d_a x d_h map applied to the query (h_N).
    pub query: Array2<f64>,
    /// d_a x d_v map applied to each frame vector.
    pub key: Array2<f64>,
    /// d_a score vector.
    pub score: Array1<f64>,
}

impl AttentionParams {
    pub fn init(d_match: usize, d_hidden: usize, d_video: usize, rng: &mut impl Rng) -> Self {
        AttentionParams {
            query: glorot_uniform(d_match, d_hidden, rng),
            key: glorot_uniform(d_match, d_video, rng),
            score: glorot_uniform(1, d_match, rng).row(0).to_owned(),
        }
    }

    pub fn zeros(d_match: usize, d_hidden: usize, d_video: usize) -> Self {
        AttentionParams {
            query: Array2::zeros((d_match, d_hidden)),
            key: Array2::zeros((d_match, d_video)),
            score: Array1::zeros(d_match),
        }
    }

    pub fn d_match(&self) -> usize {
        self.score.len()
    }

    pub fn d_hidden(&self) -> usize {
        self.query.ncols()
    }

    pub fn d_video(&self) -> usize {
        self.key.ncols()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttnPair {
    /// Softmax frame weights, length M.
    pub alpha: Array1<f64>,
    /// tanh(query*h + key*v_m) rows, M x d_a.
    pub tanh_scores: Array2<f64>,
    /// Attention-weighted frame average, length d_v.
    pub weighted: Array1<f64>,
}

/// Attention forward for one (query, video) pair, given the precomputed
/// query projection `qh = query * h_N` and key projections `kv = V * key^T`.
pub(crate) fn attn_pair_forward(
    score: &Array1<f64>,
    qh: &Array1<f64>,
    kv: &Array2<f64>,
    v_rows: &Array2<f64>,
) -> AttnPair {
    let m = kv.nrows();
    let mut tanh_scores = Array2::zeros((m, score.len()));
    let mut raw = Array1::zeros(m);
    for (idx, kv_row) in kv.axis_iter(Axis(0)).enumerate() {
        let t = (qh + &kv_row).mapv(f64::tanh);
        raw[idx] = score.dot(&t);
        tanh_scores.row_mut(idx).assign(&t);
    }
    let alpha = softmax(raw.view());
    let weighted = v_rows.t().dot(&alpha);
    AttnPair {
        alpha,
        tanh_scores,
        weighted,
    }
}

/// Backward through one attention pair. Accumulates parameter gradients into
/// `grads` and the query gradient into `d_h_n`.
pub(crate) fn attn_pair_backward(
    attn: &AttentionParams,
    h_n: ArrayView1<'_, f64>,
    v_rows: &Array2<f64>,
    pair: &AttnPair,
    d_weighted: ArrayView1<'_, f64>,
    grads: &mut AttentionParams,
    d_h_n: &mut Array1<f64>,
) {
    let d_alpha = v_rows.dot(&d_weighted);
    let d_raw = softmax_backward(pair.alpha.view(), d_alpha.view());
    grads.score += &pair.tanh_scores.t().dot(&d_raw);
    let m = v_rows.nrows();
    let mut dp = Array2::zeros((m, attn.d_match()));
    for idx in 0..m {
        let t = pair.tanh_scores.row(idx);
        let mut row = dp.row_mut(idx);
        for (k, out) in row.iter_mut().enumerate() {
            *out = d_raw[idx] * attn.score[k] * (1.0 - t[k] * t[k]);
        }
    }
    grads.key += &dp.t().dot(v_rows);
    let sum_dp = dp.sum_axis(Axis(0));
    outer_into(&mut grads.query, sum_dp.view(), h_n);
    *d_h_n += &attn.query.t().dot(&sum_dp);
}

fn check_in_dim(map: &LinearMap, found: usize, context: &'static str) -> Result<()> {
    if map.in_dim() != found {
        return Err(Error::DimMismatch {
            context,
            expected: map.in_dim(),
            found,
        });
    }
    Ok(())
}

/// Simple-average sentence encoder: |W_word * mean(rows)|, normalized.
pub fn encode_sentence_sa(w_word: &LinearMap, s: &SentenceFeatures) -> Result<Embedding> {
    check_in_dim(w_word, s.dim(), "encode_sentence_sa")?;
    let mean = s.rows().mean_axis(Axis(0)).expect("N >= 1");
    Embedding::project(w_word.apply(mean.view()).view())
}

/// LSTM sentence encoder: |h_N|, normalized. Requires d_h = d_e.
pub fn encode_sentence_lstm(params: &LstmParams, s: &SentenceFeatures) -> Result<Embedding> {
    let trace = lstm_forward(params, s.rows())?;
    Embedding::project(trace.h_n.view())
}

/// Raw final hidden state of the sentence LSTM (the attention query).
pub fn lstm_last_hidden(params: &LstmParams, s: &SentenceFeatures) -> Result<Array1<f64>> {
    Ok(lstm_forward(params, s.rows())?.h_n)
}

/// Simple-average video encoder: |W_video * mean(rows)|, normalized.
pub fn encode_video_sa(w_video: &LinearMap, v: &VideoFeatures) -> Result<Embedding> {
    check_in_dim(w_video, v.dim(), "encode_video_sa")?;
    let mean = v.rows().mean_axis(Axis(0)).expect("M >= 1");
    Embedding::project(w_video.apply(mean.view()).view())
}

/// Soft-attention weights over the frames of `v` for query state `h_n`:
/// e_m = score . tanh(query*h_n + key*v_m), alpha = softmax(e).
pub fn attention_weights(
    params: &AttentionParams,
    h_n: ArrayView1<'_, f64>,
    v: &VideoFeatures,
) -> Result<Array1<f64>> {
    if params.d_hidden() != h_n.len() {
        return Err(Error::DimMismatch {
            context: "attention query",
            expected: params.d_hidden(),
            found: h_n.len(),
        });
    }
    if params.d_video() != v.dim() {
        return Err(Error::DimMismatch {
            context: "attention key",
            expected: params.d_video(),
            found: v.dim(),
        });
    }
    let qh = params.query.dot(&h_n);
    let kv = v.rows().dot(&params.key.t());
    Ok(attn_pair_forward(&params.score, &qh, &kv, v.rows()).alpha)
}

/// Attention video encoder: |W_video * sum_m alpha_m v_m|, normalized.
pub fn encode_video_attention(
    params: &AttentionParams,
    w_video: &LinearMap,
    h_n: ArrayView1<'_, f64>,
    v: &VideoFeatures,
) -> Result<Embedding> {
    check_in_dim(w_video, v.dim(), "encode_video_attention")?;
    if params.d_hidden() != h_n.len() {
        return Err(Error::DimMismatch {
            context: "attention query",
            expected: params.d_hidden(),
            found: h_n.len(),
        });
    }
    if params.d_video() != v.dim() {
        return Err(Error::DimMismatch {
            context: "attention key",
            expected: params.d_video(),
            found: v.dim(),
        });
    }
    let qh = params.query.dot(&h_n);
    let kv = v.rows().dot(&params.key.t());
    let pair = attn_pair_forward(&params.score, &qh, &kv, v.rows());
    Embedding::project(w_video.apply(pair.weighted.view()).view())
}

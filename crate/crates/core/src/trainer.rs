//! Gradient computation, Adam optimization with global-norm clipping,
//! minibatch sampling, early stopping, and checkpointing.
//!
//! Gradients are exact analytic gradients of the configured ranking loss
//! through normalization, absolute value, attention, and the unrolled LSTM;
//! `grad_check` verifies them against central finite differences. Within a
//! step, the per-sample encodings of a minibatch run in parallel; gradient
//! accumulation is a deterministic ordered reduction, so a fixed seed gives
//! identical parameter trajectories across runs on the same machine.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{SentenceFeatures, VideoFeatures};
use crate::encoders::{
    attn_pair_backward, attn_pair_forward, lstm_backward, lstm_forward, project_backward,
    AttnPair, LinearMap, LstmTrace, Projection,
};
use crate::error::{Error, Result};
use crate::math::outer_into;
use crate::model::{Arch, Dims, ModelParams};
use crate::objective::{order_similarity_grad, rank_loss_grad, LossKind, Margin, ScoreMatrix};

/// One training pair.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub caption: SentenceFeatures,
    pub video: VideoFeatures,
}

/// Training hyperparameters and bookkeeping knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub loss_kind: LossKind,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_threshold: f64,
    pub margin: f64,
    pub d_e: usize,
    pub d_a: usize,
    pub monitor_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub rng_seed: u64,
}

impl TrainConfig {
    /// Standard settings; only the architecture and epoch budget vary by use.
    pub fn new(arch: Arch, max_epochs: usize) -> Self {
        TrainConfig {
            arch,
            max_epochs,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall {
                size: self.batch_size,
            });
        }
        if self.clip_threshold <= 0.0 {
            return Err(Error::InvalidThreshold {
                value: self.clip_threshold,
            });
        }
        Margin::new(self.margin)?;
        if self.d_e == 0 || self.max_epochs == 0 || self.patience == 0 || self.monitor_size == 0 {
            return Err(Error::EmptyInput {
                what: "d_e, max_epochs, patience, and monitor_size",
            });
        }
        Ok(())
    }

    fn margin(&self) -> Margin {
        Margin::new(self.margin).expect("validated")
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::M1,
            loss_kind: LossKind::Pairwise,
            batch_size: 200,
            lr: 0.001,
            clip_threshold: 2.0,
            margin: 0.05,
            d_e: 950,
            d_a: 300,
            monitor_size: 1000,
            patience: 5,
            max_epochs: 30,
            rng_seed: 0,
        }
    }
}

// --- forward pass ----------------------------------------------------------

struct MeanProj {
    mean: Array1<f64>,
    proj: Projection,
}

fn mean_proj(map: &LinearMap, rows: &Array2<f64>) -> Result<MeanProj> {
    if map.in_dim() != rows.ncols() {
        return Err(Error::DimMismatch {
            context: "linear encoder input",
            expected: map.in_dim(),
            found: rows.ncols(),
        });
    }
    let mean = rows.mean_axis(Axis(0)).expect("at least one row");
    let proj = Projection::new(map.apply(mean.view()))?;
    Ok(MeanProj { mean, proj })
}

struct LstmProj {
    trace: LstmTrace,
    proj: Projection,
}

fn lstm_proj(lstm: &crate::encoders::LstmParams, rows: &Array2<f64>) -> Result<LstmProj> {
    let trace = lstm_forward(lstm, rows)?;
    let proj = Projection::new(trace.h_n.clone())?;
    Ok(LstmProj { trace, proj })
}

fn indexed_errors<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(Error::DegenerateSample {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

fn scores_from_embeddings(caps: &[&Array1<f64>], vids: &[&Array1<f64>]) -> Array2<f64> {
    let b = caps.len();
    let mut s = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let mut penalty = 0.0;
            for (&c, &v) in caps[i].iter().zip(vids[j].iter()) {
                let r = (c - v).max(0.0);
                penalty += r * r;
            }
            s[[i, j]] = -penalty;
        }
    }
    s
}

/// Everything the backward pass needs from one forward evaluation.
enum ForwardState {
    M1 {
        caps: Vec<MeanProj>,
        vids: Vec<MeanProj>,
    },
    M2 {
        caps: Vec<LstmProj>,
        vids: Vec<MeanProj>,
    },
    M3 {
        caps: Vec<LstmProj>,
        /// query * h_n per caption.
        qhs: Vec<Array1<f64>>,
        /// V * key^T per video.
        kvs: Vec<Array2<f64>>,
    },
}

fn forward_batch(params: &ModelParams, batch: &[&TrainSample]) -> Result<(ForwardState, ScoreMatrix)> {
    let state = match params {
        ModelParams::M1 { w_word, w_video } => {
            let caps = indexed_errors(
                batch
                    .par_iter()
                    .map(|s| mean_proj(w_word, s.caption.rows()))
                    .collect(),
            )?;
            let vids = indexed_errors(
                batch
                    .par_iter()
                    .map(|s| mean_proj(w_video, s.video.rows()))
                    .collect(),
            )?;
            ForwardState::M1 { caps, vids }
        }
        ModelParams::M2 { lstm, w_video } => {
            let caps = indexed_errors(
                batch
                    .par_iter()
                    .map(|s| lstm_proj(lstm, s.caption.rows()))
                    .collect(),
            )?;
            let vids = indexed_errors(
                batch
                    .par_iter()
                    .map(|s| mean_proj(w_video, s.video.rows()))
                    .collect(),
            )?;
            ForwardState::M2 { caps, vids }
        }
        ModelParams::M3 { lstm, attn, .. } => {
            let caps = indexed_errors(
                batch
                    .par_iter()
                    .map(|s| lstm_proj(lstm, s.caption.rows()))
                    .collect(),
            )?;
            let qhs: Vec<Array1<f64>> = caps.iter().map(|c| attn.query.dot(&c.trace.h_n)).collect();
            let kvs: Vec<Array2<f64>> = batch
                .par_iter()
                .map(|s| s.video.rows().dot(&attn.key.t()))
                .collect();
            ForwardState::M3 { caps, qhs, kvs }
        }
    };

    let scores = match (&state, params) {
        (ForwardState::M1 { caps, vids }, _) => {
            let c: Vec<_> = caps.iter().map(|x| &x.proj.out).collect();
            let v: Vec<_> = vids.iter().map(|x| &x.proj.out).collect();
            scores_from_embeddings(&c, &v)
        }
        (ForwardState::M2 { caps, vids }, _) => {
            let c: Vec<_> = caps.iter().map(|x| &x.proj.out).collect();
            let v: Vec<_> = vids.iter().map(|x| &x.proj.out).collect();
            scores_from_embeddings(&c, &v)
        }
        (ForwardState::M3 { caps, qhs, kvs }, ModelParams::M3 { w_video, attn, .. }) => {
            let b = batch.len();
            let rows: Vec<Result<Vec<f64>>> = (0..b)
                .into_par_iter()
                .map(|i| {
                    let mut row = Vec::with_capacity(b);
                    for j in 0..b {
                        let pair =
                            attn_pair_forward(&attn.score, &qhs[i], &kvs[j], batch[j].video.rows());
                        let proj = Projection::new(w_video.apply(pair.weighted.view()))
                            .map_err(|e| Error::DegenerateSample {
                                index: j,
                                source: Box::new(e),
                            })?;
                        let mut penalty = 0.0;
                        for (&c, &v) in caps[i].proj.out.iter().zip(proj.out.iter()) {
                            let r = (c - v).max(0.0);
                            penalty += r * r;
                        }
                        row.push(-penalty);
                    }
                    Ok(row)
                })
                .collect();
            let mut s = Array2::zeros((b, b));
            for (i, row) in rows.into_iter().enumerate() {
                for (j, v) in row?.into_iter().enumerate() {
                    s[[i, j]] = v;
                }
            }
            s
        }
        _ => unreachable!("state matches params variant"),
    };
    Ok((state, ScoreMatrix::new(scores)?))
}

/// Loss of the configured ranking objective over one minibatch (forward
/// only). A single-sample batch has no contrastive terms and scores 0.
pub fn batch_loss(params: &ModelParams, batch: &[TrainSample], cfg: &TrainConfig) -> Result<f64> {
    let refs: Vec<&TrainSample> = batch.iter().collect();
    batch_loss_refs(params, &refs, cfg)
}

fn batch_loss_refs(params: &ModelParams, batch: &[&TrainSample], cfg: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput { what: "batch" });
    }
    let (_, scores) = forward_batch(params, batch)?;
    Ok(crate::objective::rank_loss(
        &scores,
        &cfg.margin(),
        cfg.loss_kind,
    ))
}

// --- backward pass ---------------------------------------------------------

fn embedding_grads(
    ds: &Array2<f64>,
    caps: &[&Array1<f64>],
    vids: &[&Array1<f64>],
) -> (Vec<Array1<f64>>, Vec<Array1<f64>>) {
    let b = caps.len();
    let d = caps[0].len();
    let mut dc: Vec<Array1<f64>> = (0..b).map(|_| Array1::zeros(d)).collect();
    let mut dv: Vec<Array1<f64>> = (0..b).map(|_| Array1::zeros(d)).collect();
    for i in 0..b {
        for j in 0..b {
            let g = ds[[i, j]];
            if g == 0.0 {
                continue;
            }
            let (dci, dvj) = order_similarity_grad(caps[i].view(), vids[j].view());
            dc[i].scaled_add(g, &dci);
            dv[j].scaled_add(g, &dvj);
        }
    }
    (dc, dv)
}

/// Loss and exact analytic parameter gradients for one minibatch.
/// The returned gradients are a parameter-shaped tensor bundle.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(f64, ModelParams)> {
    let refs: Vec<&TrainSample> = batch.iter().collect();
    batch_gradients_refs(params, &refs, cfg)
}

fn batch_gradients_refs(
    params: &ModelParams,
    batch: &[&TrainSample],
    cfg: &TrainConfig,
) -> Result<(f64, ModelParams)> {
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall { size: batch.len() });
    }
    let (state, scores) = forward_batch(params, batch)?;
    let (loss, ds) = rank_loss_grad(&scores, &cfg.margin(), cfg.loss_kind);
    let mut grads = params.zeros_like();

    match (&state, params, &mut grads) {
        (
            ForwardState::M1 { caps, vids },
            ModelParams::M1 { .. },
            ModelParams::M1 {
                w_word: g_word,
                w_video: g_video,
            },
        ) => {
            let c: Vec<_> = caps.iter().map(|x| &x.proj.out).collect();
            let v: Vec<_> = vids.iter().map(|x| &x.proj.out).collect();
            let (dc, dv) = embedding_grads(&ds, &c, &v);
            for (cap, g) in caps.iter().zip(dc) {
                let dz = project_backward(&cap.proj, g.view());
                outer_into(g_word.matrix_mut(), dz.view(), cap.mean.view());
            }
            for (vid, g) in vids.iter().zip(dv) {
                let dz = project_backward(&vid.proj, g.view());
                outer_into(g_video.matrix_mut(), dz.view(), vid.mean.view());
            }
        }
        (
            ForwardState::M2 { caps, vids },
            ModelParams::M2 { lstm, .. },
            ModelParams::M2 {
                lstm: g_lstm,
                w_video: g_video,
            },
        ) => {
            let c: Vec<_> = caps.iter().map(|x| &x.proj.out).collect();
            let v: Vec<_> = vids.iter().map(|x| &x.proj.out).collect();
            let (dc, dv) = embedding_grads(&ds, &c, &v);
            for (sample, (cap, g)) in batch.iter().zip(caps.iter().zip(dc)) {
                let dh_n = project_backward(&cap.proj, g.view());
                lstm_backward(lstm, sample.caption.rows(), &cap.trace, dh_n.view(), g_lstm);
            }
            for (vid, g) in vids.iter().zip(dv) {
                let dz = project_backward(&vid.proj, g.view());
                outer_into(g_video.matrix_mut(), dz.view(), vid.mean.view());
            }
        }
        (
            ForwardState::M3 { caps, qhs, kvs },
            ModelParams::M3 {
                lstm,
                w_video,
                attn,
            },
            ModelParams::M3 {
                lstm: g_lstm,
                w_video: g_video,
                attn: g_attn,
            },
        ) => {
            let b = batch.len();
            let d_e = caps[0].proj.out.len();
            // caption-embedding grads and attention-query grads, per caption
            let mut dc: Vec<Array1<f64>> = (0..b).map(|_| Array1::zeros(d_e)).collect();
            let mut dh_attn: Vec<Array1<f64>> =
                (0..b).map(|_| Array1::zeros(caps[0].trace.h_n.len())).collect();
            for i in 0..b {
                for j in 0..b {
                    let g = ds[[i, j]];
                    if g == 0.0 {
                        continue;
                    }
                    // recompute the pair encoding; cheap next to caching B^2 traces
                    let pair: AttnPair =
                        attn_pair_forward(&attn.score, &qhs[i], &kvs[j], batch[j].video.rows());
                    let proj = Projection::new(w_video.apply(pair.weighted.view()))
                        .expect("succeeded in forward");
                    let (dci, dvj) =
                        order_similarity_grad(caps[i].proj.out.view(), proj.out.view());
                    dc[i].scaled_add(g, &dci);
                    let dv = dvj * g;
                    let dz = project_backward(&proj, dv.view());
                    outer_into(g_video.matrix_mut(), dz.view(), pair.weighted.view());
                    let d_weighted = w_video.matrix().t().dot(&dz);
                    attn_pair_backward(
                        attn,
                        caps[i].trace.h_n.view(),
                        batch[j].video.rows(),
                        &pair,
                        d_weighted.view(),
                        g_attn,
                        &mut dh_attn[i],
                    );
                }
            }
            for (sample, ((cap, g), mut dh)) in
                batch.iter().zip(caps.iter().zip(dc).zip(dh_attn.drain(..)))
            {
                dh += &project_backward(&cap.proj, g.view());
                lstm_backward(lstm, sample.caption.rows(), &cap.trace, dh.view(), g_lstm);
            }
        }
        _ => unreachable!("state matches params variant"),
    }
    Ok((loss, grads))
}

// --- optimization ----------------------------------------------------------

/// Rescales the bundle so its global L2 norm does not exceed `threshold`.
/// Returns the pre-clip global norm. Direction is preserved.
pub fn clip_gradients(grads: &mut ModelParams, threshold: f64) -> Result<f64> {
    if threshold <= 0.0 {
        return Err(Error::InvalidThreshold { value: threshold });
    }
    let norm = grads.global_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for (_, slice) in grads.tensor_slices_mut() {
            for v in slice {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    step: u64,
}

impl AdamState {
    pub fn new(template: &ModelParams) -> Self {
        AdamState {
            m: template.zeros_like(),
            v: template.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let p_slices = params.tensor_slices_mut();
    let g_slices = grads.tensor_slices();
    let m_slices = state.m.tensor_slices_mut();
    let v_slices = state.v.tensor_slices_mut();
    for (((p, g), m), v) in p_slices
        .into_iter()
        .zip(g_slices)
        .zip(m_slices)
        .zip(v_slices)
    {
        debug_assert_eq!(p.0, g.0);
        debug_assert_eq!(p.0, m.0);
        for k in 0..p.1.len() {
            let grad = g.1[k];
            m.1[k] = ADAM_BETA1 * m.1[k] + (1.0 - ADAM_BETA1) * grad;
            v.1[k] = ADAM_BETA2 * v.1[k] + (1.0 - ADAM_BETA2) * grad * grad;
            let m_hat = m.1[k] / bc1;
            let v_hat = v.1[k] / bc2;
            p.1[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

// --- training loop ---------------------------------------------------------

/// One line of the training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub monitor_loss: f64,
    pub wall_ms: u64,
}

fn dims_of(cfg: &TrainConfig, samples: &[TrainSample]) -> Result<Dims> {
    let d_w = samples[0].caption.dim();
    let d_v = samples[0].video.dim();
    for s in samples {
        if s.caption.dim() != d_w {
            return Err(Error::DimMismatch {
                context: "caption feature dimension",
                expected: d_w,
                found: s.caption.dim(),
            });
        }
        if s.video.dim() != d_v {
            return Err(Error::DimMismatch {
                context: "video feature dimension",
                expected: d_v,
                found: s.video.dim(),
            });
        }
    }
    Ok(Dims {
        d_w,
        d_v,
        d_e: cfg.d_e,
        d_a: cfg.d_a,
    })
}

fn dataset_loss(params: &ModelParams, samples: &[&TrainSample], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        total += batch_loss_refs(params, chunk, cfg)?;
    }
    Ok(total)
}

/// Trains from a fresh initialization, early-stopping on the loss of a fixed
/// monitor subset of `valid_set`. Returns the best-monitor parameters and the
/// per-epoch history. When `out_dir` is given, the best checkpoint is written
/// there atomically on every improvement (`best.oemb`) and history lines are
/// appended to `history.jsonl`.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[TrainSample],
    valid_set: &[TrainSample],
    out_dir: Option<&Path>,
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput { what: "train set" });
    }
    if valid_set.is_empty() {
        return Err(Error::EmptyInput { what: "valid set" });
    }
    let dims = dims_of(cfg, train_set)?;
    dims_of(cfg, valid_set)?;

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.rng_seed);
    let mut params = ModelParams::init(cfg.arch, dims, &mut rng);

    // fixed monitor subset for the whole run
    let monitor: Vec<&TrainSample> = if valid_set.len() > cfg.monitor_size {
        rand::seq::index::sample(&mut rng, valid_set.len(), cfg.monitor_size)
            .into_iter()
            .map(|i| &valid_set[i])
            .collect()
    } else {
        valid_set.iter().collect()
    };

    let mut history_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("history.jsonl");
            Some(fs::File::create(&path).map_err(|e| Error::io(&path, e))?)
        }
        None => None,
    };

    let mut state = AdamState::new(&params);
    let mut history = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut epochs_since_improvement = 0usize;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        indices.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for (step, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // a singleton has no contrastive terms
            }
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_gradients_refs(&params, &batch, cfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            train_loss += loss;
            clip_gradients(&mut grads, cfg.clip_threshold)?;
            adam_step(&mut params, &grads, &mut state, cfg.lr);
        }

        let monitor_loss = dataset_loss(&params, &monitor, cfg)?;
        if !monitor_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: 0 });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            monitor_loss,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some(f) = history_file.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| Error::io("history.jsonl", e))?;
        }
        history.push(record);

        let improved = best.as_ref().map_or(true, |(l, _)| monitor_loss < *l);
        if improved {
            best = Some((monitor_loss, params.clone()));
            epochs_since_improvement = 0;
            if let Some(dir) = out_dir {
                checkpoint::save(dir.join("best.oemb"), &params)?;
            }
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, history))
}

// --- gradient verification --------------------------------------------------

/// Builds a random tiny instance for `cfg.arch` and returns the maximum
/// relative error between analytic gradients and central finite differences
/// (h = 1e-5) over all parameter coordinates.
pub fn grad_check(cfg: &TrainConfig, rng_seed: u64) -> Result<f64> {
    const H: f64 = 1e-5;
    let dims = Dims {
        d_w: 3,
        d_v: 4,
        d_e: 5,
        d_a: 3,
    };
    let batch_size = 3;
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let params = ModelParams::init(cfg.arch, dims, &mut rng);
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let n = rng.gen_range(2..5);
        let caption = SentenceFeatures::new(Array2::from_shape_fn((n, dims.d_w), |_| {
            rng.gen_range(-1.0..1.0)
        }))?;
        let m = rng.gen_range(2..5);
        let video = VideoFeatures::new(Array2::from_shape_fn((m, dims.d_v), |_| {
            rng.gen_range(-1.0..1.0)
        }))?;
        batch.push(TrainSample { caption, video });
    }

    let (_, analytic) = batch_gradients(&params, &batch, cfg)?;
    let mut max_rel = 0.0f64;
    let n_tensors = analytic.tensor_slices().len();
    for t in 0..n_tensors {
        let len = analytic.tensor_slices()[t].1.len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensor_slices_mut()[t].1[k] += H;
            let f_plus = batch_loss(&plus, &batch, cfg)?;
            let mut minus = params.clone();
            minus.tensor_slices_mut()[t].1[k] -= H;
            let f_minus = batch_loss(&minus, &batch, cfg)?;
            let numeric = (f_plus - f_minus) / (2.0 * H);
            let a = analytic.tensor_slices()[t].1[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

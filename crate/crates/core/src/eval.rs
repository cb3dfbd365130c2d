//! Retrieval ranking metrics and multiple-choice scoring.
//!
//! Annotation task: given a video, rank candidate captions. Retrieval task:
//! given a caption, rank candidate videos. Both use the order-violation
//! similarity with the caption as first argument. Queries are read-only over
//! the model and scored in parallel; rank reduction is deterministic.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SentenceFeatures, VideoFeatures};
use crate::encoders::{
    attn_pair_forward, encode_sentence_lstm, encode_sentence_sa, encode_video_sa, lstm_forward,
    Embedding,
};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::objective::order_similarity;

/// Rank of the ground-truth item for each query, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankList {
    ranks: Vec<usize>,
}

impl RankList {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptyInput { what: "rank list" });
        }
        if ranks.iter().any(|&r| r == 0) {
            return Err(Error::EmptyInput { what: "rank (must be >= 1)" });
        }
        Ok(RankList { ranks })
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

fn caption_embedding(params: &ModelParams, s: &SentenceFeatures) -> Result<Embedding> {
    match params {
        ModelParams::M1 { w_word, .. } => encode_sentence_sa(w_word, s),
        ModelParams::M2 { lstm, .. } | ModelParams::M3 { lstm, .. } => {
            encode_sentence_lstm(lstm, s)
        }
    }
}

/// Full score matrix `s[i][j] = S(caption_i, video_j)`.
///
/// For m1/m2 each side is encoded once. For m3 the video encoding is
/// query-dependent (attention keyed by the caption's final LSTM state), so
/// every pair gets its own video encoding.
pub fn score_matrix(
    params: &ModelParams,
    captions: &[SentenceFeatures],
    videos: &[VideoFeatures],
) -> Result<Array2<f64>> {
    if captions.is_empty() || videos.is_empty() {
        return Err(Error::EmptyInput { what: "pool" });
    }
    match params {
        ModelParams::M1 { w_video, .. } | ModelParams::M2 { w_video, .. } => {
            let caps: Vec<Embedding> = captions
                .par_iter()
                .map(|s| caption_embedding(params, s))
                .collect::<Result<_>>()?;
            let vids: Vec<Embedding> = videos
                .par_iter()
                .map(|v| encode_video_sa(w_video, v))
                .collect::<Result<_>>()?;
            let mut s = Array2::zeros((caps.len(), vids.len()));
            for (i, c) in caps.iter().enumerate() {
                for (j, v) in vids.iter().enumerate() {
                    s[[i, j]] =
                        order_similarity(c.values().view(), v.values().view())?;
                }
            }
            Ok(s)
        }
        ModelParams::M3 {
            lstm,
            w_video,
            attn,
        } => {
            struct Query {
                embedding: Embedding,
                qh: Array1<f64>,
            }
            let queries: Vec<Query> = captions
                .par_iter()
                .map(|s| {
                    let trace = lstm_forward(lstm, s.rows())?;
                    let embedding = Embedding::project(trace.h_n.view())?;
                    Ok(Query {
                        qh: attn.query.dot(&trace.h_n),
                        embedding,
                    })
                })
                .collect::<Result<_>>()?;
            let kvs: Vec<Array2<f64>> = videos
                .par_iter()
                .map(|v| v.rows().dot(&attn.key.t()))
                .collect();
            let rows: Vec<Result<Vec<f64>>> = queries
                .par_iter()
                .map(|q| {
                    let mut row = Vec::with_capacity(videos.len());
                    for (kv, v) in kvs.iter().zip(videos) {
                        let pair = attn_pair_forward(&attn.score, &q.qh, kv, v.rows());
                        let emb = Embedding::project(w_video.apply(pair.weighted.view()).view())?;
                        row.push(order_similarity(
                            q.embedding.values().view(),
                            emb.values().view(),
                        )?);
                    }
                    Ok(row)
                })
                .collect();
            let mut s = Array2::zeros((captions.len(), videos.len()));
            for (i, row) in rows.into_iter().enumerate() {
                for (j, v) in row?.into_iter().enumerate() {
                    s[[i, j]] = v;
                }
            }
            Ok(s)
        }
    }
}

/// Score of a single (caption, video) pair under the model.
pub fn score_pair(
    params: &ModelParams,
    caption: &SentenceFeatures,
    video: &VideoFeatures,
) -> Result<f64> {
    let s = score_matrix(params, std::slice::from_ref(caption), std::slice::from_ref(video))?;
    Ok(s[[0, 0]])
}

/// Rank within one score pool: 1 + the number of strictly better candidates.
/// Ties favor the ground truth.
fn rank_of(gt_score: f64, pool: impl Iterator<Item = f64>) -> usize {
    1 + pool.filter(|&s| s > gt_score).count()
}

/// Annotation ranks from a score matrix: for video j, the rank of caption j
/// among all captions.
pub(crate) fn annotation_ranks(scores: &Array2<f64>) -> Vec<usize> {
    (0..scores.ncols())
        .map(|j| {
            let gt = scores[[j, j]];
            rank_of(
                gt,
                (0..scores.nrows()).filter(|&i| i != j).map(|i| scores[[i, j]]),
            )
        })
        .collect()
}

/// Retrieval ranks from a score matrix: for caption i, the rank of video i
/// among all videos.
pub(crate) fn retrieval_ranks(scores: &Array2<f64>) -> Vec<usize> {
    (0..scores.nrows())
        .map(|i| {
            let gt = scores[[i, i]];
            rank_of(
                gt,
                (0..scores.ncols()).filter(|&j| j != i).map(|j| scores[[i, j]]),
            )
        })
        .collect()
}

fn check_pool(videos: &[VideoFeatures], captions: &[SentenceFeatures]) -> Result<()> {
    if videos.is_empty() || captions.is_empty() {
        return Err(Error::EmptyInput { what: "pool" });
    }
    if videos.len() != captions.len() {
        return Err(Error::LengthMismatch {
            videos: videos.len(),
            captions: captions.len(),
        });
    }
    Ok(())
}

/// For each video, ranks its ground-truth caption (`videos[i]` pairs with
/// `captions[i]`) against the whole caption pool.
pub fn rank_annotation(
    params: &ModelParams,
    videos: &[VideoFeatures],
    captions: &[SentenceFeatures],
) -> Result<RankList> {
    check_pool(videos, captions)?;
    let scores = score_matrix(params, captions, videos)?;
    RankList::new(annotation_ranks(&scores))
}

/// For each caption, ranks its ground-truth video against the whole video
/// pool.
pub fn rank_retrieval(
    params: &ModelParams,
    videos: &[VideoFeatures],
    captions: &[SentenceFeatures],
) -> Result<RankList> {
    check_pool(videos, captions)?;
    let scores = score_matrix(params, captions, videos)?;
    RankList::new(retrieval_ranks(&scores))
}

/// Percentage of queries whose ground truth ranks within the top k.
pub fn recall_at_k(ranks: &RankList, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::EmptyInput { what: "k" });
    }
    let hits = ranks.ranks().iter().filter(|&&r| r <= k).count();
    Ok(100.0 * hits as f64 / ranks.len() as f64)
}

/// Median rank; an even count averages the two middle values.
pub fn median_rank(ranks: &RankList) -> Result<f64> {
    let mut sorted: Vec<usize> = ranks.ranks().to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    })
}

/// Index of the highest-scoring caption among exactly 5 choices.
/// Ties break toward the lowest index.
pub fn mc_answer(
    params: &ModelParams,
    video: &VideoFeatures,
    choices: &[SentenceFeatures],
) -> Result<usize> {
    if choices.len() != 5 {
        return Err(Error::ChoiceCount {
            found: choices.len(),
        });
    }
    let scores = score_matrix(params, choices, std::slice::from_ref(video))?;
    let mut best = 0;
    for k in 1..choices.len() {
        if scores[[k, 0]] > scores[[best, 0]] {
            best = k;
        }
    }
    Ok(best)
}

/// One resolved multiple-choice question: features plus the answer position.
#[derive(Debug, Clone)]
pub struct McInstance {
    pub video: VideoFeatures,
    pub choices: Vec<SentenceFeatures>,
    pub answer_index: usize,
}

/// Percentage of questions the model answers correctly.
pub fn mc_accuracy(params: &ModelParams, test: &[McInstance]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput { what: "test" });
    }
    let correct: Vec<bool> = test
        .par_iter()
        .map(|q| Ok(mc_answer(params, &q.video, &q.choices)? == q.answer_index))
        .collect::<Result<_>>()?;
    let hits = correct.iter().filter(|&&c| c).count();
    Ok(100.0 * hits as f64 / test.len() as f64)
}

/// Recall@{1,5,10} block of a rank report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecallReport {
    #[serde(rename = "1")]
    pub r1: f64,
    #[serde(rename = "5")]
    pub r5: f64,
    #[serde(rename = "10")]
    pub r10: f64,
}

/// JSON metric report for one ranking direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankReport {
    pub task: String,
    pub pool_size: usize,
    pub r_at: RecallReport,
    pub medr: f64,
}

impl RankReport {
    pub fn from_ranks(task: &str, ranks: &RankList) -> Result<Self> {
        Ok(RankReport {
            task: task.to_string(),
            pool_size: ranks.len(),
            r_at: RecallReport {
                r1: recall_at_k(ranks, 1)?,
                r5: recall_at_k(ranks, 5)?,
                r10: recall_at_k(ranks, 10)?,
            },
            medr: median_rank(ranks)?,
        })
    }
}

/// JSON metric report for a multiple-choice run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub task: String,
    pub n: usize,
    pub accuracy: f64,
}

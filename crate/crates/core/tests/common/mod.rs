//! Synthetic corpora shared by the acceptance suite.
//!
//! Two families:
//! - concept corpus: each sample carries a signature of 3 distinct latent
//!   concepts out of 32; captions contain the concept word vectors (plus
//!   noise tokens), videos contain frames around the mean of the concept
//!   video vectors. Learnable by a simple-average model.
//! - order corpus: every caption is a noisy permutation of the same 4 base
//!   tokens, and the video encodes the permutation through position-specific
//!   linear maps. The caption mean carries no class signal, so order-blind
//!   encoders are reduced to chance while an LSTM can separate the classes.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;

use oemb_core::data::{DatasetManifest, ManifestItem, SentenceFeatures, Split, VideoFeatures};
use oemb_core::eval::McInstance;
use oemb_core::mctest::McQuestion;
use oemb_core::trainer::TrainSample;

pub const N_CONCEPTS: usize = 32;
pub const SIGNATURE_LEN: usize = 3;
pub const CONCEPT_D_W: usize = 16;
pub const CONCEPT_D_V: usize = 32;

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Array1<f64> {
    let v = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0f64));
    let norm = v.dot(&v).sqrt().max(1e-9);
    v / norm
}

/// Latent concept dictionary: a word-space and a video-space vector per
/// concept.
pub struct ConceptCorpus {
    pub word_vecs: Vec<Array1<f64>>,
    pub video_vecs: Vec<Array1<f64>>,
}

impl ConceptCorpus {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ConceptCorpus {
            word_vecs: (0..N_CONCEPTS)
                .map(|_| unit_vector(CONCEPT_D_W, &mut rng))
                .collect(),
            video_vecs: (0..N_CONCEPTS)
                .map(|_| unit_vector(CONCEPT_D_V, &mut rng))
                .collect(),
        }
    }
}

/// A training pair with the concept signature it was built from.
pub struct LabeledSample {
    pub sample: TrainSample,
    pub signature: Vec<usize>,
}

impl LabeledSample {
    /// One activity phrase per concept, e.g. `["k03", "k17", "k29"]`.
    pub fn label_phrases(&self) -> Vec<String> {
        self.signature.iter().map(|k| format!("k{k:02}")).collect()
    }
}

fn random_signature(rng: &mut impl Rng) -> Vec<usize> {
    let mut sig: Vec<usize> = (0..N_CONCEPTS).collect();
    sig.shuffle(rng);
    let mut sig: Vec<usize> = sig.into_iter().take(SIGNATURE_LEN).collect();
    sig.sort_unstable();
    sig
}

fn concept_sample(corpus: &ConceptCorpus, signature: &[usize], rng: &mut impl Rng) -> TrainSample {
    // caption: one noisy token per concept plus 2 pure-noise tokens
    let mut rows = Vec::new();
    for &k in signature {
        let row: Vec<f64> = corpus.word_vecs[k]
            .iter()
            .map(|&v| v + rng.gen_range(-0.03..0.03))
            .collect();
        rows.push(row);
    }
    for _ in 0..2 {
        rows.push((0..CONCEPT_D_W).map(|_| rng.gen_range(-0.05..0.05)).collect());
    }
    rows.shuffle(rng);
    let n = rows.len();
    let caption = SentenceFeatures::new(
        Array2::from_shape_vec((n, CONCEPT_D_W), rows.concat()).unwrap(),
    )
    .unwrap();

    // video: 3..=8 frames around the mean of the concept video vectors
    let mut mean = Array1::<f64>::zeros(CONCEPT_D_V);
    for &k in signature {
        mean += &corpus.video_vecs[k];
    }
    mean /= signature.len() as f64;
    let m = rng.gen_range(3..=8);
    let frames = Array2::from_shape_fn((m, CONCEPT_D_V), |(_, j)| {
        mean[j] + rng.gen_range(-0.05..0.05)
    });
    let video = VideoFeatures::new(frames).unwrap();
    TrainSample { caption, video }
}

/// Samples with random (possibly repeating) signatures.
pub fn concept_samples(corpus: &ConceptCorpus, seed: u64, n: usize) -> Vec<LabeledSample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let signature = random_signature(&mut rng);
            LabeledSample {
                sample: concept_sample(corpus, &signature, &mut rng),
                signature,
            }
        })
        .collect()
}

/// Samples whose signatures are pairwise distinct (pool-safe held-out sets).
pub fn concept_samples_distinct(corpus: &ConceptCorpus, seed: u64, n: usize) -> Vec<LabeledSample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let signature = random_signature(&mut rng);
        if !seen.insert(signature.clone()) {
            continue;
        }
        out.push(LabeledSample {
            sample: concept_sample(corpus, &signature, &mut rng),
            signature,
        });
    }
    out
}

pub fn plain_samples(labeled: &[LabeledSample]) -> Vec<TrainSample> {
    labeled.iter().map(|l| l.sample.clone()).collect()
}

/// A labeled manifest over `samples`, one row per sample, all in `split`.
/// Feature paths are synthetic identifiers (questions are resolved back to
/// in-memory features by index).
pub fn labeled_manifest(labeled: &[LabeledSample], split: Split) -> DatasetManifest {
    let items: Vec<ManifestItem> = labeled
        .iter()
        .enumerate()
        .map(|(i, l)| ManifestItem {
            id: sample_id(i),
            split,
            features: Some(format!("mem://{i}").into()),
            tokens: vec!["synthetic".into()],
            activity_labels: l.label_phrases(),
            rephrase: false,
        })
        .collect();
    DatasetManifest::new(items).unwrap()
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

fn index_of_id(id: &str) -> usize {
    id[1..].parse().unwrap()
}

/// Resolves question ids back to features from the generating corpus.
pub fn resolve_questions(questions: &[McQuestion], labeled: &[LabeledSample]) -> Vec<McInstance> {
    questions
        .iter()
        .map(|q| McInstance {
            video: labeled[index_of_id(&q.video_id)].sample.video.clone(),
            choices: q
                .choice_ids
                .iter()
                .map(|id| labeled[index_of_id(id)].sample.caption.clone())
                .collect(),
            answer_index: q.answer_index,
        })
        .collect()
}

pub const ORDER_TOKENS: usize = 4;
pub const ORDER_D_W: usize = 16;
pub const ORDER_D_V: usize = 32;

/// Base tokens plus position-specific video maps: the video representation
/// of a permutation p is sum_pos R_pos * t_{p(pos)}.
pub struct OrderCorpus {
    tokens: Vec<Array1<f64>>,
    position_maps: Vec<Array2<f64>>,
}

impl OrderCorpus {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let tokens = (0..ORDER_TOKENS)
            .map(|_| unit_vector(ORDER_D_W, &mut rng))
            .collect();
        let scale = (ORDER_D_W as f64).sqrt().recip();
        let position_maps = (0..ORDER_TOKENS)
            .map(|_| {
                Array2::from_shape_fn((ORDER_D_V, ORDER_D_W), |_| {
                    rng.gen_range(-1.0..1.0f64) * scale
                })
            })
            .collect();
        OrderCorpus {
            tokens,
            position_maps,
        }
    }

    fn sample(&self, perm: &[usize], rng: &mut impl Rng) -> TrainSample {
        let rows = Array2::from_shape_fn((ORDER_TOKENS, ORDER_D_W), |(pos, j)| {
            self.tokens[perm[pos]][j] + rng.gen_range(-0.05..0.05)
        });
        let caption = SentenceFeatures::new(rows).unwrap();

        let mut base = Array1::<f64>::zeros(ORDER_D_V);
        for (pos, &tok) in perm.iter().enumerate() {
            base += &self.position_maps[pos].dot(&self.tokens[tok]);
        }
        let m = rng.gen_range(3..=8);
        let frames = Array2::from_shape_fn((m, ORDER_D_V), |(_, j)| {
            base[j] + rng.gen_range(-0.03..0.03)
        });
        TrainSample {
            caption,
            video: VideoFeatures::new(frames).unwrap(),
        }
    }
}

/// Samples over uniformly random permutations of the base tokens.
pub fn order_samples(corpus: &OrderCorpus, seed: u64, n: usize) -> Vec<TrainSample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut perm: Vec<usize> = (0..ORDER_TOKENS).collect();
            perm.shuffle(&mut rng);
            corpus.sample(&perm, &mut rng)
        })
        .collect()
}

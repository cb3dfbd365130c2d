//! Builds the 5-way multiple-choice test from a labeled caption corpus.
//!
//! Each question pairs a video with its ground-truth caption and four
//! distractor captions drawn uniformly from the same split, constrained so
//! that no distractor shares any activity-label word with the correct
//! answer. Question construction is independent per video: every question's
//! RNG stream is derived from (seed, video_id), so output is deterministic
//! and byte-identical across runs regardless of traversal order.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};

/// Lowercased word set drawn from all activity phrases of one caption.
/// Carries a 64-bit word bloom so disjointness checks over large pools stay
/// cheap.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivityLabelSet {
    words: BTreeSet<String>,
    bloom: u64,
}

impl ActivityLabelSet {
    pub fn words(&self) -> &BTreeSet<String> {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn intersects(&self, other: &ActivityLabelSet) -> bool {
        if self.bloom & other.bloom == 0 {
            return false;
        }
        // iterate the smaller set
        let (small, large) = if self.words.len() <= other.words.len() {
            (&self.words, &other.words)
        } else {
            (&other.words, &self.words)
        };
        small.iter().any(|w| large.contains(w))
    }
}

/// Union of whitespace-split, lowercased words across all phrases.
pub fn label_words(labels: &[impl AsRef<str>]) -> ActivityLabelSet {
    let mut words = BTreeSet::new();
    let mut bloom = 0u64;
    for phrase in labels {
        for word in phrase.as_ref().split_whitespace() {
            let word = word.to_lowercase();
            bloom |= 1u64 << (fnv1a(word.as_bytes()) % 64);
            words.insert(word);
        }
    }
    ActivityLabelSet { words, bloom }
}

/// One multiple-choice question. `choice_ids[answer_index]` is the
/// ground-truth caption of `video_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McQuestion {
    pub video_id: String,
    #[serde(rename = "choices")]
    pub choice_ids: Vec<String>,
    #[serde(rename = "answer")]
    pub answer_index: usize,
}

/// Blind variant: the same record without the answer.
#[derive(Serialize)]
struct BlindQuestion<'a> {
    video_id: &'a str,
    choices: &'a [String],
}

fn pick_uniform(eligible: &[usize], rng: &mut impl Rng, n: usize) -> Result<Vec<usize>> {
    if eligible.len() < n {
        return Err(Error::InsufficientDistractors {
            caption_id: String::new(),
            eligible: eligible.len(),
            needed: n,
        });
    }
    Ok(eligible.choose_multiple(rng, n).copied().collect())
}

/// Uniformly samples `n` distinct distractor ids from the pool entries whose
/// label words do not intersect `correct`. The pool must already exclude the
/// ground-truth caption itself.
pub fn sample_distractors(
    pool: &[(String, ActivityLabelSet)],
    correct: &ActivityLabelSet,
    rng: &mut impl Rng,
    n: usize,
) -> Result<Vec<String>> {
    let eligible: Vec<usize> = (0..pool.len())
        .filter(|&j| !pool[j].1.intersects(correct))
        .collect();
    let picked = pick_uniform(&eligible, rng, n)?;
    Ok(picked.into_iter().map(|j| pool[j].0.clone()).collect())
}

/// What to do when a video cannot get enough distractors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsufficientPolicy {
    SkipWithWarning,
    Abort,
}

#[derive(Debug, Clone)]
pub struct McBuildOptions {
    pub seed: u64,
    /// Exclude distractor captions attached to the question's own video.
    pub exclude_same_video: bool,
    pub on_insufficient: InsufficientPolicy,
}

impl Default for McBuildOptions {
    fn default() -> Self {
        McBuildOptions {
            seed: 0,
            exclude_same_video: true,
            on_insufficient: InsufficientPolicy::SkipWithWarning,
        }
    }
}

/// Build summary: the questions plus skip counters.
#[derive(Debug, Clone)]
pub struct McBuild {
    pub questions: Vec<McQuestion>,
    /// Videos skipped because their caption carries no activity labels.
    pub skipped_unlabeled: usize,
    /// Videos skipped for lack of eligible distractors.
    pub skipped_insufficient: usize,
}

/// Stable 64-bit FNV-1a; the basis of per-question RNG streams.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn question_rng(seed: u64, video_id: &str) -> ChaCha12Rng {
    let mut material = Vec::with_capacity(8 + video_id.len());
    material.extend_from_slice(&seed.to_le_bytes());
    material.extend_from_slice(video_id.as_bytes());
    ChaCha12Rng::seed_from_u64(fnv1a(&material))
}

/// Builds one question per eligible video of `split`: an item with a
/// feature file and a non-empty label set, for which 4 label-disjoint
/// distractors exist in the same split. The answer position is uniform.
pub fn build_mc_test(
    manifest: &DatasetManifest,
    split: Split,
    opts: &McBuildOptions,
) -> Result<McBuild> {
    let items: Vec<_> = manifest.split_items(split).collect();
    let labeled: Vec<(String, ActivityLabelSet)> = items
        .iter()
        .map(|item| (item.id.clone(), label_words(&item.activity_labels)))
        .collect();

    let mut questions = Vec::new();
    let mut skipped_unlabeled = 0;
    let mut skipped_insufficient = 0;

    let mut eligible = Vec::with_capacity(items.len());
    for (target, (item, (id, labels))) in items.iter().zip(&labeled).enumerate() {
        if item.features.is_none() {
            continue; // caption-only rows serve as distractors, not questions
        }
        if labels.is_empty() {
            skipped_unlabeled += 1;
            continue;
        }
        eligible.clear();
        for (j, (cand, (_, cand_labels))) in items.iter().zip(&labeled).enumerate() {
            if j == target {
                continue;
            }
            if opts.exclude_same_video {
                if let (Some(a), Some(b)) = (&cand.features, &item.features) {
                    if a == b {
                        continue;
                    }
                }
            }
            if !cand_labels.intersects(labels) {
                eligible.push(j);
            }
        }

        let mut rng = question_rng(opts.seed, id);
        let picked = match pick_uniform(&eligible, &mut rng, 4) {
            Ok(p) => p,
            Err(Error::InsufficientDistractors { eligible, needed, .. }) => {
                match opts.on_insufficient {
                    InsufficientPolicy::SkipWithWarning => {
                        skipped_insufficient += 1;
                        continue;
                    }
                    InsufficientPolicy::Abort => {
                        return Err(Error::InsufficientDistractors {
                            caption_id: id.clone(),
                            eligible,
                            needed,
                        })
                    }
                }
            }
            Err(e) => return Err(e),
        };

        let answer_index = rng.gen_range(0..5);
        let mut choice_ids: Vec<String> =
            picked.into_iter().map(|j| labeled[j].0.clone()).collect();
        choice_ids.insert(answer_index, id.clone());
        questions.push(McQuestion {
            video_id: id.clone(),
            choice_ids,
            answer_index,
        });
    }

    Ok(McBuild {
        questions,
        skipped_unlabeled,
        skipped_insufficient,
    })
}

/// Writes questions as line-delimited JSON. With `with_answers` false, the
/// `answer` key is omitted (the blind scoring variant).
pub fn write_mc_file(
    path: impl AsRef<Path>,
    questions: &[McQuestion],
    with_answers: bool,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for q in questions {
        let line = if with_answers {
            serde_json::to_string(q).expect("question serializes")
        } else {
            serde_json::to_string(&BlindQuestion {
                video_id: &q.video_id,
                choices: &q.choice_ids,
            })
            .expect("question serializes")
        };
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a question file written with answers.
pub fn load_mc_file(path: impl AsRef<Path>) -> Result<Vec<McQuestion>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: McQuestion = serde_json::from_str(line).map_err(|e| Error::ManifestParse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if q.choice_ids.len() != 5 {
            return Err(Error::ChoiceCount {
                found: q.choice_ids.len(),
            });
        }
        out.push(q);
    }
    Ok(out)
}

//! Acceptance suite.
//!
//! Full-corpus benchmark results (LSMDC16/COCO recall tables, the 58.1%
//! multiple-choice accuracy) need the external video datasets and VGG
//! features and are out of scope here; the criteria below substitute
//! property-based checks on synthetic corpora. Each test prints one
//! pass/fail line (visible with `--nocapture`; a failing test panics with
//! the same context).

mod common;

use std::time::Instant;

use common::*;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use oemb_core::data::{SentenceFeatures, Split, VideoFeatures};
use oemb_core::encoders::{
    attention_weights, encode_video_attention, encode_video_sa, AttentionParams, LinearMap,
};
use oemb_core::eval::{
    mc_accuracy, median_rank, rank_annotation, rank_retrieval, recall_at_k, RankList,
};
use oemb_core::mctest::{build_mc_test, label_words, write_mc_file, McBuildOptions};
use oemb_core::model::{Arch, Dims, ModelParams};
use oemb_core::objective::{
    annotation_rank_loss, order_similarity, pairwise_rank_loss, LossKind, Margin, ScoreMatrix,
};
use oemb_core::trainer::{grad_check, train, TrainConfig, TrainSample};

fn pass(n: usize, name: &str, details: &str) {
    println!("acceptance {n:02} ({name}): pass — {details}");
}

fn concept_cfg(arch: Arch, seed: u64, loss: LossKind) -> TrainConfig {
    TrainConfig {
        arch,
        loss_kind: loss,
        batch_size: 32,
        lr: 0.03,
        clip_threshold: 2.0,
        margin: 0.05,
        d_e: 32,
        d_a: 16,
        monitor_size: 1000,
        patience: 50,
        max_epochs: 50,
        rng_seed: seed,
    }
}

#[test]
fn acceptance_01_full_corpus_results_out_of_scope() {
    // Table-scale numbers require the LSMDC16/COCO corpora and VGG-19
    // features, which this repository ingests but does not ship. The
    // remaining criteria check the algorithmic properties on synthetic data.
    pass(
        1,
        "full-corpus results",
        "not desk-reproducible; substituted by the property checks below",
    );
}

#[test]
fn acceptance_02_gradient_check_all_architectures() {
    let started = Instant::now();
    let mut details = String::new();
    for arch in [Arch::M1, Arch::M2, Arch::M3] {
        let cfg = TrainConfig {
            arch,
            d_e: 5,
            d_a: 3,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let mut worst = 0.0f64;
        for seed in 0..10 {
            let err = grad_check(&cfg, seed).unwrap();
            assert!(
                err < 1e-4,
                "{arch} seed {seed}: max relative error {err:e} >= 1e-4"
            );
            worst = worst.max(err);
        }
        details.push_str(&format!("{arch} worst {worst:.2e}; "));
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "gradient check took {elapsed:?}, budget is 60 s"
    );
    pass(2, "gradient check", &format!("{details}{elapsed:.2?} total"));
}

// direct transcriptions of the similarity and loss formulas, kept separate
// from the library implementation on purpose
fn oracle_order_similarity(c: &[f64], v: &[f64]) -> f64 {
    -c.iter()
        .zip(v)
        .map(|(&ci, &vi)| (ci - vi).max(0.0).powi(2))
        .sum::<f64>()
}

fn oracle_pairwise(s: &[Vec<f64>], alpha: f64) -> f64 {
    let b = s.len();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if j != i {
                total += (alpha - s[i][i] + s[j][i]).max(0.0);
                total += (alpha - s[i][i] + s[i][j]).max(0.0);
            }
        }
    }
    total
}

fn oracle_annotation(s: &[Vec<f64>], alpha: f64) -> f64 {
    let b = s.len();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if j != i {
                total += (alpha - s[i][i] + s[j][i]).max(0.0);
            }
        }
    }
    total
}

#[test]
fn acceptance_03_similarity_and_loss_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(33);

    // hand-computed values reproduce exactly
    let c = Array1::from_vec(vec![3.0, 1.0]);
    let v = Array1::from_vec(vec![1.0, 2.0]);
    assert_eq!(order_similarity(c.view(), v.view()).unwrap(), -4.0);
    let hand = ScoreMatrix::new(ndarray::array![[-0.5, -0.6], [-0.4, 0.0]]).unwrap();
    let margin = Margin::new(0.05).unwrap();
    assert!((pairwise_rank_loss(&hand, &margin) - 0.15).abs() < 1e-15);
    assert!((annotation_rank_loss(&hand, &margin) - 0.15).abs() < 1e-15);

    let mut checked = 0usize;
    while checked < 10_000 {
        let dim = rng.gen_range(1..6);
        let cv: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let vv: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ours = order_similarity(
            Array1::from_vec(cv.clone()).view(),
            Array1::from_vec(vv.clone()).view(),
        )
        .unwrap();
        assert!((ours - oracle_order_similarity(&cv, &vv)).abs() < 1e-9);

        let b = rng.gen_range(1..6);
        let raw: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..b).map(|_| -rng.gen_range(0.0..2.0)).collect())
            .collect();
        let alpha = rng.gen_range(0.0..0.3);
        let m = Margin::new(alpha).unwrap();
        let matrix = ScoreMatrix::new(Array2::from_shape_fn((b, b), |(i, j)| raw[i][j])).unwrap();
        assert!((pairwise_rank_loss(&matrix, &m) - oracle_pairwise(&raw, alpha)).abs() < 1e-9);
        assert!((annotation_rank_loss(&matrix, &m) - oracle_annotation(&raw, alpha)).abs() < 1e-9);
        checked += 3;
    }
    pass(3, "similarity/loss oracles", "10,000+ random inputs within 1e-9");
}

#[test]
fn acceptance_04_synthetic_separability() {
    let started = Instant::now();
    let corpus = ConceptCorpus::new(1000);
    let train_set = plain_samples(&concept_samples(&corpus, 1001, 1280));
    let valid_set = plain_samples(&concept_samples(&corpus, 1002, 128));
    let holdout = concept_samples_distinct(&corpus, 1003, 100);

    let cfg = concept_cfg(Arch::M1, 7, LossKind::Pairwise);
    let (model, history) = train(&cfg, &train_set, &valid_set, None).unwrap();
    assert!(history.len() <= 50);

    let videos: Vec<VideoFeatures> = holdout.iter().map(|l| l.sample.video.clone()).collect();
    let captions: Vec<SentenceFeatures> =
        holdout.iter().map(|l| l.sample.caption.clone()).collect();
    let ranks = rank_annotation(&model, &videos, &captions).unwrap();
    let r1 = recall_at_k(&ranks, 1).unwrap();
    let medr = median_rank(&ranks).unwrap();
    let elapsed = started.elapsed();
    assert!(r1 >= 90.0, "annotation R@1 {r1} < 90 on the held-out pool");
    assert_eq!(medr, 1.0, "median rank {medr} != 1");
    assert!(
        elapsed.as_secs() < 120,
        "separability run took {elapsed:?}, budget is 2 min"
    );
    pass(
        4,
        "synthetic separability",
        &format!("R@1 {r1:.1}%, medR {medr}, {elapsed:.2?}"),
    );
}

#[test]
fn acceptance_05_lstm_beats_average_on_order_task() {
    let mut details = String::new();
    for seed in 1..=3u64 {
        let corpus = OrderCorpus::new(2000 + seed);
        let train_set = order_samples(&corpus, 2100 + seed, 480);
        let valid_set = order_samples(&corpus, 2200 + seed, 96);
        let holdout = order_samples(&corpus, 2300 + seed, 100);
        let videos: Vec<VideoFeatures> = holdout.iter().map(|s| s.video.clone()).collect();
        let captions: Vec<SentenceFeatures> = holdout.iter().map(|s| s.caption.clone()).collect();

        let mut r10 = Vec::new();
        for arch in [Arch::M1, Arch::M2] {
            let cfg = TrainConfig {
                lr: 0.003,
                max_epochs: 40,
                patience: 40,
                ..concept_cfg(arch, 2400 + seed, LossKind::Pairwise)
            };
            let (model, _) = train(&cfg, &train_set, &valid_set, None).unwrap();
            let ranks = rank_annotation(&model, &videos, &captions).unwrap();
            r10.push(recall_at_k(&ranks, 10).unwrap());
        }
        assert!(
            r10[1] >= 2.0 * r10[0],
            "seed {seed}: M2 R@10 {} is not >= 2x M1 R@10 {}",
            r10[1],
            r10[0]
        );
        details.push_str(&format!("seed {seed}: {:.0} vs {:.0}; ", r10[1], r10[0]));
    }
    pass(5, "order sensitivity (M2 vs M1 R@10)", &details);
}

#[test]
fn acceptance_06_annotation_loss_direction() {
    let mut details = String::new();
    for seed in 1..=3u64 {
        let corpus = ConceptCorpus::new(3000 + seed);
        let train_set = plain_samples(&concept_samples(&corpus, 3100 + seed, 1280));
        let valid_set = plain_samples(&concept_samples(&corpus, 3200 + seed, 128));
        let holdout = concept_samples_distinct(&corpus, 3300 + seed, 200);
        let manifest = labeled_manifest(&holdout, Split::Test);
        let build = build_mc_test(&manifest, Split::Test, &McBuildOptions::default()).unwrap();
        let instances = resolve_questions(&build.questions, &holdout);
        assert!(instances.len() >= 150, "too many skipped questions");

        let mut acc = Vec::new();
        for loss in [LossKind::Pairwise, LossKind::Annotation] {
            let cfg = concept_cfg(Arch::M1, 3400 + seed, loss);
            let (model, _) = train(&cfg, &train_set, &valid_set, None).unwrap();
            acc.push(mc_accuracy(&model, &instances).unwrap());
        }
        assert!(
            acc[1] >= acc[0] - 1.0,
            "seed {seed}: annotation accuracy {} fell more than 1 point below pairwise {}",
            acc[1],
            acc[0]
        );
        details.push_str(&format!("seed {seed}: {:.1} vs {:.1}; ", acc[1], acc[0]));
    }
    pass(6, "annotation-loss direction (accuracy)", &details);
}

#[test]
fn acceptance_07_mc_builder_integrity() {
    let corpus = ConceptCorpus::new(4000);
    let labeled = concept_samples(&corpus, 4001, 1100);
    let manifest = labeled_manifest(&labeled, Split::Test);
    let opts = McBuildOptions::default();

    let build = build_mc_test(&manifest, Split::Test, &opts).unwrap();
    assert!(
        build.questions.len() >= 1000,
        "only {} questions built",
        build.questions.len()
    );
    let questions = &build.questions[..1000];

    let mut position_counts = [0usize; 5];
    for q in questions {
        position_counts[q.answer_index] += 1;
        let distinct: std::collections::HashSet<_> = q.choice_ids.iter().collect();
        assert_eq!(distinct.len(), 5, "choices not distinct in {q:?}");
        let correct = label_words(&manifest.get(&q.video_id).unwrap().activity_labels);
        for (k, id) in q.choice_ids.iter().enumerate() {
            if k == q.answer_index {
                continue;
            }
            let distractor = label_words(&manifest.get(id).unwrap().activity_labels);
            assert!(
                !distractor.intersects(&correct),
                "distractor {id} shares label words with {}",
                q.video_id
            );
        }
    }
    // binomial 3-sigma band around n/5
    let n = questions.len() as f64;
    let sigma = (n * 0.2 * 0.8).sqrt();
    for (pos, &count) in position_counts.iter().enumerate() {
        assert!(
            (count as f64 - n / 5.0).abs() <= 3.0 * sigma,
            "answer position {pos} count {count} outside 3 sigma of {}",
            n / 5.0
        );
    }

    // fixed seed: byte-identical output
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    write_mc_file(&a, &build.questions, true).unwrap();
    let again = build_mc_test(&manifest, Split::Test, &opts).unwrap();
    write_mc_file(&b, &again.questions, true).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    pass(
        7,
        "MC builder integrity",
        &format!(
            "1000 questions, positions {position_counts:?}, byte-identical rebuild"
        ),
    );
}

#[test]
fn acceptance_08_random_model_mc_baseline() {
    let corpus = ConceptCorpus::new(5000);
    let labeled = concept_samples(&corpus, 5001, 10_000);
    let manifest = labeled_manifest(&labeled, Split::Test);
    let build = build_mc_test(&manifest, Split::Test, &McBuildOptions::default()).unwrap();
    assert!(
        build.questions.len() == 10_000,
        "expected 10000 questions, built {}",
        build.questions.len()
    );
    let instances = resolve_questions(&build.questions, &labeled);

    let mut rng = ChaCha12Rng::seed_from_u64(5002);
    let untrained = ModelParams::init(
        Arch::M1,
        Dims {
            d_w: CONCEPT_D_W,
            d_v: CONCEPT_D_V,
            d_e: 32,
            d_a: 0,
        },
        &mut rng,
    );
    let accuracy = mc_accuracy(&untrained, &instances).unwrap();
    assert!(
        (accuracy - 20.0).abs() <= 1.2,
        "untrained model accuracy {accuracy} outside 20 +/- 1.2"
    );
    pass(
        8,
        "random-model MC baseline",
        &format!("accuracy {accuracy:.2}% over 10,000 questions"),
    );
}

#[test]
fn acceptance_09_metric_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(6000);

    // recall@k and median rank against brute-force recomputation
    for _ in 0..1000 {
        let pool = rng.gen_range(1..60);
        let len = rng.gen_range(1..40);
        let ranks: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=pool)).collect();
        let list = RankList::new(ranks.clone()).unwrap();
        let k = rng.gen_range(1..=pool);
        let brute = 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / len as f64;
        assert_eq!(recall_at_k(&list, k).unwrap(), brute);

        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        let brute_median = if len % 2 == 1 {
            sorted[len / 2] as f64
        } else {
            (sorted[len / 2 - 1] + sorted[len / 2]) as f64 / 2.0
        };
        assert_eq!(median_rank(&list).unwrap(), brute_median);
    }

    // rank functions against a full-sort oracle on pools up to 20
    for pool in 2..=20usize {
        let mut prng = ChaCha12Rng::seed_from_u64(6100 + pool as u64);
        let model = ModelParams::init(
            Arch::M1,
            Dims {
                d_w: 4,
                d_v: 3,
                d_e: 6,
                d_a: 0,
            },
            &mut prng,
        );
        let videos: Vec<VideoFeatures> = (0..pool)
            .map(|_| {
                VideoFeatures::new(Array2::from_shape_fn((2, 3), |_| prng.gen_range(-1.0..1.0)))
                    .unwrap()
            })
            .collect();
        let captions: Vec<SentenceFeatures> = (0..pool)
            .map(|_| {
                SentenceFeatures::new(Array2::from_shape_fn((3, 4), |_| {
                    prng.gen_range(-1.0..1.0)
                }))
                .unwrap()
            })
            .collect();
        let scores = oemb_core::eval::score_matrix(&model, &captions, &videos).unwrap();
        let annotation = rank_annotation(&model, &videos, &captions).unwrap();
        let retrieval = rank_retrieval(&model, &videos, &captions).unwrap();
        for q in 0..pool {
            let mut caption_pool: Vec<(usize, f64)> =
                (0..pool).map(|i| (i, scores[[i, q]])).collect();
            caption_pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let oracle = caption_pool.iter().position(|&(i, _)| i == q).unwrap() + 1;
            assert_eq!(annotation.ranks()[q], oracle, "annotation pool {pool} q {q}");

            let mut video_pool: Vec<(usize, f64)> =
                (0..pool).map(|j| (j, scores[[q, j]])).collect();
            video_pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let oracle = video_pool.iter().position(|&(j, _)| j == q).unwrap() + 1;
            assert_eq!(retrieval.ranks()[q], oracle, "retrieval pool {pool} q {q}");
        }
    }
    pass(9, "metric oracles", "1000 rank lists + pools 2..=20 exact");
}

#[test]
fn acceptance_10_attention_invariants() {
    let mut rng = ChaCha12Rng::seed_from_u64(7000);
    let d_h = 6;
    let d_v = 5;
    for trial in 0..1000 {
        let attn = AttentionParams::init(4, d_h, d_v, &mut rng);
        let h = Array1::from_shape_fn(d_h, |_| rng.gen_range(-1.0..1.0));
        let m = rng.gen_range(1..9);
        let v = VideoFeatures::new(Array2::from_shape_fn((m, d_v), |_| {
            rng.gen_range(-1.0..1.0)
        }))
        .unwrap();
        let alpha = attention_weights(&attn, h.view(), &v).unwrap();
        assert_eq!(alpha.len(), m);
        assert!(alpha.iter().all(|&a| a > 0.0), "trial {trial}: weight <= 0");
        assert!(
            (alpha.sum() - 1.0).abs() < 1e-9,
            "trial {trial}: weights sum to {}",
            alpha.sum()
        );
    }

    // identical frames: uniform weights, and attention encoding == simple
    // average encoding
    for trial in 0..200 {
        let attn = AttentionParams::init(4, d_h, d_v, &mut rng);
        let w_video = LinearMap::glorot(6, d_v, &mut rng);
        let h = Array1::from_shape_fn(d_h, |_| rng.gen_range(-1.0..1.0));
        let m = rng.gen_range(2..9);
        let frame: Vec<f64> = (0..d_v).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows = Array2::from_shape_fn((m, d_v), |(_, j)| frame[j]);
        let v = VideoFeatures::new(rows).unwrap();
        let alpha = attention_weights(&attn, h.view(), &v).unwrap();
        for &a in alpha.iter() {
            assert!(
                (a - 1.0 / m as f64).abs() < 1e-9,
                "trial {trial}: non-uniform weight {a} over identical frames"
            );
        }
        let attended = encode_video_attention(&attn, &w_video, h.view(), &v).unwrap();
        let averaged = encode_video_sa(&w_video, &v).unwrap();
        for (a, b) in attended.values().iter().zip(averaged.values()) {
            assert!((a - b).abs() < 1e-9, "trial {trial}: encodings diverge");
        }
    }
    pass(10, "attention invariants", "1000 weight checks, 200 uniform cases");
}

#[test]
fn acceptance_11_training_determinism() {
    let corpus = ConceptCorpus::new(8000);
    let train_set = plain_samples(&concept_samples(&corpus, 8001, 96));
    let valid_set = plain_samples(&concept_samples(&corpus, 8002, 32));
    let cfg = TrainConfig {
        max_epochs: 4,
        patience: 4,
        ..concept_cfg(Arch::M2, 8003, LossKind::Pairwise)
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (params_a, _) = train(&cfg, &train_set, &valid_set, Some(dir_a.path())).unwrap();
    let (params_b, _) = train(&cfg, &train_set, &valid_set, Some(dir_b.path())).unwrap();
    assert_eq!(params_a, params_b, "returned parameters differ");

    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(
        read(dir_a.path(), "best.oemb"),
        read(dir_b.path(), "best.oemb"),
        "checkpoints differ"
    );
    assert_eq!(
        read(dir_a.path(), "best.oemb.json"),
        read(dir_b.path(), "best.oemb.json"),
        "sidecars differ"
    );

    // history is identical up to wall-clock timings
    let strip = |d: &std::path::Path| -> Vec<serde_json::Value> {
        String::from_utf8(read(d, "history.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v
            })
            .collect()
    };
    assert_eq!(strip(dir_a.path()), strip(dir_b.path()), "histories differ");
    pass(
        11,
        "training determinism",
        "identical checkpoints and histories (wall_ms excluded) across two runs",
    );
}

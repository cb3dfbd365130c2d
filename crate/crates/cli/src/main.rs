//! `oemb` — train and evaluate joint language-visual order embeddings.
//!
//! Reports are line-delimited JSON on stdout; logs and warnings go to
//! stderr. Exit codes: 0 success, 1 validation error (bad arguments, bad
//! config, missing inputs), 2 runtime failure. `OEMB_THREADS` caps worker
//! parallelism.

mod config;
mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use oemb_core::data::{
    load_manifest, load_video_features, subsample_frames, write_video_features, SentenceFeatures,
    Split, VideoFeatures, WordTable,
};
use oemb_core::encoders::{attention_weights, lstm_last_hidden};
use oemb_core::eval::{mc_accuracy, rank_annotation, rank_retrieval, McReport, RankReport};
use oemb_core::mctest::{build_mc_test, load_mc_file, write_mc_file, InsufficientPolicy, McBuildOptions};
use oemb_core::model::{Arch, ModelParams};
use oemb_core::trainer::{grad_check, train, TrainConfig, TrainSample};
use oemb_core::{checkpoint, data};

use config::{Overrides, Resolved};

#[derive(Parser)]
#[command(
    name = "oemb",
    version,
    about = "Joint language-visual order embeddings: data preparation, training, retrieval evaluation, multiple-choice tests, attention inspection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Override the configured architecture (m1|m2|m3)
    #[arg(long)]
    arch: Option<String>,
    /// Override the configured loss (pairwise|annotation)
    #[arg(long)]
    loss: Option<String>,
    /// Override the configured RNG seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, out: Option<&Path>) -> Result<Resolved> {
        config::require_exists(&self.config, "config")?;
        config::load(
            &self.config,
            &Overrides {
                arch: self.arch.clone(),
                loss: self.loss.clone(),
                seed: self.seed,
                out: out.map(Path::to_path_buf),
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw frame-feature files and convert them to VFEA
    Prepare {
        /// Input files: whitespace text matrices (one frame per line) or
        /// existing VFEA files to validate
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Output directory for the converted .vfea files
        #[arg(long)]
        out: PathBuf,
        /// Keep every stride-th frame (index 0 first)
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Train a model and write the best checkpoint plus history
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Override the configured checkpoint directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the test split in both directions and report recall/medR
    EvalRank {
        #[command(flatten)]
        common: ConfigArgs,
        /// Checkpoint to evaluate (default: <checkpoint_dir>/best.oemb)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate a seeded subsample of this many pairs
        #[arg(long)]
        subsample: Option<usize>,
    },
    /// Build the multiple-choice test files from a labeled manifest
    BuildMc {
        #[command(flatten)]
        common: ConfigArgs,
        /// Output directory for mc_questions.jsonl and the blind variant
        #[arg(long)]
        out: PathBuf,
        /// Which split to draw questions and distractors from
        #[arg(long, default_value = "test")]
        split: String,
        /// Keep distractors away from captions of the same video
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        exclude_same_video: bool,
        /// Abort instead of skipping videos that lack eligible distractors
        #[arg(long)]
        abort_on_insufficient: bool,
    },
    /// Score a multiple-choice question file with a trained model
    EvalMc {
        #[command(flatten)]
        common: ConfigArgs,
        /// Question file written by build-mc (with answers)
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Emit per-frame attention weights of an m3 model for a phrase query
    Attend {
        #[command(flatten)]
        common: ConfigArgs,
        /// Natural-language phrase (whitespace-tokenized)
        #[arg(long)]
        phrase: String,
        /// Video ids to inspect, resolved via the test manifest
        #[arg(long, num_args = 1.., required = true)]
        videos: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences
    GradCheck {
        /// Number of random instances per architecture
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// First seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Loss to differentiate (pairwise|annotation)
        #[arg(long, default_value = "pairwise")]
        loss: String,
    },
}

/// Validation failures exit 1; failures after inputs are validated exit 2.
enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            CliError::Validation(e) | CliError::Runtime(e) => e,
        }
    }
}

fn validation<T>(r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(CliError::Validation)
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(CliError::Runtime)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    if let Ok(threads) = std::env::var("OEMB_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: OEMB_THREADS must be a positive integer, got `{threads}`");
                return ExitCode::from(1);
            }
        }
    }

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn emit(report: &impl Serialize) {
    println!("{}", serde_json::to_string(report).expect("report serializes"));
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => bail!("unknown split `{other}`; expected train, valid, or test"),
    }
}

fn load_table(path: &Path) -> Result<WordTable> {
    config::require_exists(path, "word table")?;
    Ok(data::load_word_table(path)?)
}

fn checkpoint_path(resolved: &Resolved, flag: Option<&Path>) -> Result<PathBuf> {
    let path = flag
        .map(Path::to_path_buf)
        .unwrap_or_else(|| resolved.checkpoint_dir.join("best.oemb"));
    config::require_exists(&path, "checkpoint")?;
    Ok(path)
}

/// Holds `<dir>/.lock` for the duration of a training run.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create checkpoint dir {}", dir.display()))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "another trainer holds {} (remove the stale .lock if not)",
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("cannot create lock {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn run(cli: Cli) -> std::result::Result<(), CliError> {
    match cli.command {
        Command::Prepare { input, out, stride } => cmd_prepare(&input, &out, stride),
        Command::Train { common, out } => cmd_train(&common, out.as_deref()),
        Command::EvalRank {
            common,
            checkpoint,
            subsample,
        } => cmd_eval_rank(&common, checkpoint.as_deref(), subsample),
        Command::BuildMc {
            common,
            out,
            split,
            exclude_same_video,
            abort_on_insufficient,
        } => cmd_build_mc(&common, &out, &split, exclude_same_video, abort_on_insufficient),
        Command::EvalMc {
            common,
            questions,
            checkpoint,
        } => cmd_eval_mc(&common, &questions, checkpoint.as_deref()),
        Command::Attend {
            common,
            phrase,
            videos,
            checkpoint,
        } => cmd_attend(&common, &phrase, &videos, checkpoint.as_deref()),
        Command::GradCheck { seeds, seed, loss } => cmd_grad_check(seeds, seed, &loss),
    }
}

#[derive(Serialize)]
struct PrepareReport {
    input: PathBuf,
    output: PathBuf,
    rows: usize,
    dim: usize,
}

fn read_text_matrix(path: &Path) -> Result<VideoFeatures> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse()
                    .with_context(|| format!("{}:{}: bad float `{f}`", path.display(), idx + 1))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                bail!(
                    "{}:{}: expected {} values, found {}",
                    path.display(),
                    idx + 1,
                    first.len(),
                    row.len()
                );
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no frame rows", path.display());
    }
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.concat();
    Ok(VideoFeatures::new(
        ndarray::Array2::from_shape_vec((flat.len() / dim, dim), flat).expect("checked above"),
    )?)
}

fn cmd_prepare(inputs: &[PathBuf], out: &Path, stride: usize) -> std::result::Result<(), CliError> {
    for input in inputs {
        validation(config::require_exists(input, "input"))?;
    }
    if stride == 0 {
        return Err(CliError::Validation(anyhow::anyhow!("stride must be >= 1")));
    }
    runtime(fs::create_dir_all(out).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", out.display())))?;
    for input in inputs {
        let features = validation(match input.extension().and_then(|e| e.to_str()) {
            Some("vfea") => load_video_features(input).map_err(Into::into),
            _ => read_text_matrix(input),
        })?;
        let features = validation(subsample_frames(&features, stride).map_err(Into::into))?;
        let stem = input.file_stem().unwrap_or_default().to_string_lossy();
        let output = out.join(format!("{stem}.vfea"));
        runtime(write_video_features(&output, &features).map_err(Into::into))?;
        emit(&PrepareReport {
            input: input.clone(),
            output,
            rows: features.len(),
            dim: features.dim(),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    task: String,
    epochs_run: usize,
    best_monitor_loss: f64,
    checkpoint: PathBuf,
    history: PathBuf,
}

fn cmd_train(common: &ConfigArgs, out: Option<&Path>) -> std::result::Result<(), CliError> {
    let resolved = validation(common.resolve(out))?;
    let table = validation(load_table(&resolved.word_table))?;
    let train_manifest = validation(
        config::require_manifest(&resolved.train_manifest, "train manifest").map(Path::to_path_buf),
    )?;
    let valid_manifest = validation(
        config::require_manifest(&resolved.valid_manifest, "valid manifest").map(Path::to_path_buf),
    )?;
    let train_pairs = validation(pipeline::assemble_pairs(&train_manifest, &table, Split::Train))?;
    let valid_pairs = validation(pipeline::assemble_pairs(&valid_manifest, &table, Split::Valid))?;
    let train_set: Vec<TrainSample> = train_pairs.into_iter().map(|(_, s)| s).collect();
    let valid_set: Vec<TrainSample> = valid_pairs.into_iter().map(|(_, s)| s).collect();

    let _lock = validation(DirLock::acquire(&resolved.checkpoint_dir))?;
    eprintln!(
        "training {} ({} train / {} valid pairs), checkpoints in {}",
        resolved.train.arch,
        train_set.len(),
        valid_set.len(),
        resolved.checkpoint_dir.display()
    );
    let (_, history) = runtime(
        train(&resolved.train, &train_set, &valid_set, Some(&resolved.checkpoint_dir))
            .map_err(Into::into),
    )?;
    let best = history
        .iter()
        .map(|r| r.monitor_loss)
        .fold(f64::INFINITY, f64::min);
    emit(&TrainReport {
        task: "train".into(),
        epochs_run: history.len(),
        best_monitor_loss: best,
        checkpoint: resolved.checkpoint_dir.join("best.oemb"),
        history: resolved.checkpoint_dir.join("history.jsonl"),
    });
    Ok(())
}

fn cmd_eval_rank(
    common: &ConfigArgs,
    checkpoint: Option<&Path>,
    subsample: Option<usize>,
) -> std::result::Result<(), CliError> {
    let resolved = validation(common.resolve(None))?;
    let table = validation(load_table(&resolved.word_table))?;
    let manifest = validation(
        config::require_manifest(&resolved.test_manifest, "test manifest").map(Path::to_path_buf),
    )?;
    let params = validation(
        checkpoint_path(&resolved, checkpoint)
            .and_then(|p| checkpoint::load(&p).map_err(Into::into)),
    )?;
    let mut pairs = validation(pipeline::assemble_pairs(&manifest, &table, Split::Test))?;
    if let Some(n) = subsample {
        pairs = pipeline::subsample_pairs(pairs, n, resolved.train.rng_seed);
    }
    let videos: Vec<VideoFeatures> = pairs.iter().map(|(_, s)| s.video.clone()).collect();
    let captions: Vec<SentenceFeatures> = pairs.iter().map(|(_, s)| s.caption.clone()).collect();

    let annotation = runtime(rank_annotation(&params, &videos, &captions).map_err(Into::into))?;
    let retrieval = runtime(rank_retrieval(&params, &videos, &captions).map_err(Into::into))?;
    emit(&runtime(RankReport::from_ranks("annotation", &annotation).map_err(Into::into))?);
    emit(&runtime(RankReport::from_ranks("retrieval", &retrieval).map_err(Into::into))?);
    Ok(())
}

#[derive(Serialize)]
struct BuildMcReport {
    task: String,
    n: usize,
    skipped_unlabeled: usize,
    skipped_insufficient: usize,
    questions: PathBuf,
    blind: PathBuf,
}

fn cmd_build_mc(
    common: &ConfigArgs,
    out: &Path,
    split: &str,
    exclude_same_video: bool,
    abort_on_insufficient: bool,
) -> std::result::Result<(), CliError> {
    let resolved = validation(common.resolve(None))?;
    let split = validation(parse_split(split))?;
    let manifest_path = validation(
        config::require_manifest(&resolved.test_manifest, "test manifest").map(Path::to_path_buf),
    )?;
    let manifest = validation(load_manifest(&manifest_path).map_err(Into::into))?;
    let opts = McBuildOptions {
        seed: resolved.train.rng_seed,
        exclude_same_video,
        on_insufficient: if abort_on_insufficient {
            InsufficientPolicy::Abort
        } else {
            InsufficientPolicy::SkipWithWarning
        },
    };
    let build = runtime(build_mc_test(&manifest, split, &opts).map_err(Into::into))?;
    if build.skipped_unlabeled > 0 || build.skipped_insufficient > 0 {
        eprintln!(
            "warning: skipped {} unlabeled and {} distractor-starved video(s)",
            build.skipped_unlabeled, build.skipped_insufficient
        );
    }
    runtime(
        fs::create_dir_all(out)
            .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", out.display())),
    )?;
    let questions = out.join("mc_questions.jsonl");
    let blind = out.join("mc_questions.blind.jsonl");
    runtime(write_mc_file(&questions, &build.questions, true).map_err(Into::into))?;
    runtime(write_mc_file(&blind, &build.questions, false).map_err(Into::into))?;
    emit(&BuildMcReport {
        task: "build-mc".into(),
        n: build.questions.len(),
        skipped_unlabeled: build.skipped_unlabeled,
        skipped_insufficient: build.skipped_insufficient,
        questions,
        blind,
    });
    Ok(())
}

fn cmd_eval_mc(
    common: &ConfigArgs,
    questions: &Path,
    checkpoint: Option<&Path>,
) -> std::result::Result<(), CliError> {
    let resolved = validation(common.resolve(None))?;
    let table = validation(load_table(&resolved.word_table))?;
    let manifest_path = validation(
        config::require_manifest(&resolved.test_manifest, "test manifest").map(Path::to_path_buf),
    )?;
    validation(config::require_exists(questions, "question file"))?;
    let manifest = validation(load_manifest(&manifest_path).map_err(Into::into))?;
    let params = validation(
        checkpoint_path(&resolved, checkpoint)
            .and_then(|p| checkpoint::load(&p).map_err(Into::into)),
    )?;
    let loaded = validation(load_mc_file(questions).map_err(Into::into))?;
    let instances = validation(pipeline::resolve_questions(
        &loaded,
        &manifest,
        &manifest_path,
        &table,
    ))?;
    let accuracy = runtime(mc_accuracy(&params, &instances).map_err(Into::into))?;
    emit(&McReport {
        task: "mc".into(),
        n: instances.len(),
        accuracy,
    });
    Ok(())
}

#[derive(Serialize)]
struct AttendReport {
    video_id: String,
    weights: Vec<f64>,
    argmax: usize,
}

fn cmd_attend(
    common: &ConfigArgs,
    phrase: &str,
    videos: &[String],
    checkpoint: Option<&Path>,
) -> std::result::Result<(), CliError> {
    let resolved = validation(common.resolve(None))?;
    let table = validation(load_table(&resolved.word_table))?;
    let manifest_path = validation(
        config::require_manifest(&resolved.test_manifest, "test manifest").map(Path::to_path_buf),
    )?;
    let manifest = validation(load_manifest(&manifest_path).map_err(Into::into))?;
    let params = validation(
        checkpoint_path(&resolved, checkpoint)
            .and_then(|p| checkpoint::load(&p).map_err(Into::into)),
    )?;
    let (lstm, attn) = match &params {
        ModelParams::M3 { lstm, attn, .. } => (lstm, attn),
        other => {
            return Err(CliError::Validation(anyhow::anyhow!(
                "attend needs an m3 checkpoint, found {}",
                other.arch()
            )))
        }
    };
    let tokens: Vec<&str> = phrase.split_whitespace().collect();
    let features = validation(
        oemb_core::data::encode_tokens(&table, &tokens)
            .map_err(|e| anyhow::anyhow!("phrase `{phrase}`: {e}")),
    )?;
    let h_n = runtime(lstm_last_hidden(lstm, &features).map_err(Into::into))?;
    for id in videos {
        let video = validation(pipeline::video_by_id(&manifest, &manifest_path, id))?;
        let alpha = runtime(attention_weights(attn, h_n.view(), &video).map_err(Into::into))?;
        let mut argmax = 0;
        for k in 1..alpha.len() {
            if alpha[k] > alpha[argmax] {
                argmax = k;
            }
        }
        emit(&AttendReport {
            video_id: id.clone(),
            weights: alpha.to_vec(),
            argmax,
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct GradCheckReport {
    arch: String,
    max_rel_err: f64,
    seeds: u64,
}

fn cmd_grad_check(seeds: u64, seed: u64, loss: &str) -> std::result::Result<(), CliError> {
    let loss_kind = validation(config::parse_loss(loss))?;
    if seeds == 0 {
        return Err(CliError::Validation(anyhow::anyhow!("--seeds must be >= 1")));
    }
    for arch in [Arch::M1, Arch::M2, Arch::M3] {
        let cfg = TrainConfig {
            arch,
            loss_kind,
            d_e: 5,
            d_a: 3,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let mut worst = 0.0f64;
        for s in seed..seed + seeds {
            let err = runtime(grad_check(&cfg, s).map_err(Into::into))?;
            worst = worst.max(err);
        }
        emit(&GradCheckReport {
            arch: arch.to_string(),
            max_rel_err: worst,
            seeds,
        });
    }
    Ok(())
}

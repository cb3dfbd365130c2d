//! Run configuration: a JSON document mirroring the training knobs plus the
//! input/output paths. Unknown keys are rejected; relative paths resolve
//! against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use oemb_core::model::Arch;
use oemb_core::objective::LossKind;
use oemb_core::trainer::TrainConfig;

fn default_loss() -> String {
    "pairwise".into()
}

fn default_batch() -> usize {
    200
}

fn default_lr() -> f64 {
    0.001
}

fn default_clip() -> f64 {
    2.0
}

fn default_margin() -> f64 {
    0.05
}

fn default_d_e() -> usize {
    950
}

fn default_d_a() -> usize {
    300
}

fn default_monitor() -> usize {
    1000
}

fn default_patience() -> usize {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: String,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_clip")]
    pub clip_threshold: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_d_e")]
    pub d_e: usize,
    #[serde(default = "default_d_a")]
    pub d_a: usize,
    #[serde(default = "default_monitor")]
    pub monitor_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub max_epochs: usize,
    #[serde(default)]
    pub rng_seed: u64,

    pub word_table: PathBuf,
    #[serde(default)]
    pub train_manifest: Option<PathBuf>,
    #[serde(default)]
    pub valid_manifest: Option<PathBuf>,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub arch: Option<String>,
    pub loss: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved configuration with absolute-ish paths.
#[derive(Debug)]
pub struct Resolved {
    pub train: TrainConfig,
    pub word_table: PathBuf,
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
}

pub fn parse_arch(s: &str) -> Result<Arch> {
    s.parse::<Arch>()
        .map_err(|_| anyhow::anyhow!("unknown architecture `{s}`; expected m1, m2, or m3"))
}

pub fn parse_loss(s: &str) -> Result<LossKind> {
    match s {
        "pairwise" => Ok(LossKind::Pairwise),
        "annotation" => Ok(LossKind::Annotation),
        other => bail!("unknown loss `{other}`; expected pairwise or annotation"),
    }
}

fn join(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load(config_path: &Path, overrides: &Overrides) -> Result<Resolved> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("cannot read config {}", config_path.display()))?;
    let raw: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("bad config {}", config_path.display()))?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let arch = parse_arch(overrides.arch.as_deref().unwrap_or(&raw.arch))?;
    let loss_kind = parse_loss(overrides.loss.as_deref().unwrap_or(&raw.loss))?;
    let train = TrainConfig {
        arch,
        loss_kind,
        batch_size: raw.batch_size,
        lr: raw.lr,
        clip_threshold: raw.clip_threshold,
        margin: raw.margin,
        d_e: raw.d_e,
        d_a: raw.d_a,
        monitor_size: raw.monitor_size,
        patience: raw.patience,
        max_epochs: raw.max_epochs,
        rng_seed: overrides.seed.unwrap_or(raw.rng_seed),
    };
    train.validate()?;

    let checkpoint_dir = overrides
        .out
        .clone()
        .unwrap_or_else(|| join(&base, &raw.checkpoint_dir));
    Ok(Resolved {
        train,
        word_table: join(&base, &raw.word_table),
        train_manifest: raw.train_manifest.as_deref().map(|p| join(&base, p)),
        valid_manifest: raw.valid_manifest.as_deref().map(|p| join(&base, p)),
        test_manifest: raw.test_manifest.as_deref().map(|p| join(&base, p)),
        checkpoint_dir,
    })
}

/// Fails unless `path` exists; named so the message is actionable.
pub fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

/// Extracts a required manifest path from the config.
pub fn require_manifest<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    match p {
        Some(p) => {
            require_exists(p, what)?;
            Ok(p)
        }
        None => bail!("config does not declare a {what}"),
    }
}

//! Settings merged from flags, environment and an optional JSON file.
//!
//! Precedence is flag > environment > file > built-in default. Clap handles
//! the first two (flags with an `env` fallback), so every field here is an
//! `Option` and `None` means "not given on the command line or in the
//! environment".

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use harbench_core::backbones::WeightSource;
use harbench_core::dataset::{Split, SplitRatios, DEFAULT_STRIDE};
use harbench_core::metrics::Aggregation;
use harbench_core::model::{AdamParams, ReductionMode, TrainConfig};

use crate::UsageError;

pub const THREADS_ENV: &str = "HARBENCH_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightsMode {
    /// Published ImageNet weights from the cache directory.
    Pretrained,
    /// Seeded random parameters with the real output shapes (offline testing).
    Stub,
}

/// Contents of a `--config` file; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub weights_dir: Option<PathBuf>,
    pub weights: Option<WeightsMode>,
    pub stub_seed: Option<u64>,
    // ingest
    pub root: Option<PathBuf>,
    pub stride: Option<usize>,
    pub limit: Option<usize>,
    pub ratios: Option<SplitRatios>,
    pub seed: Option<u64>,
    // train / evaluate
    pub manifest: Option<PathBuf>,
    pub backbone: Option<String>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub image_size: Option<usize>,
    pub reduction: Option<ReductionMode>,
    pub keep_best_val: Option<bool>,
    pub split: Option<Split>,
    pub aggregation: Option<Aggregation>,
    pub plots: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))
    }
}

/// First `Some` wins.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, UsageError> {
    flag.or(file)
        .ok_or_else(|| UsageError(format!("--{name} is required (flag or config file)")))
}

pub fn default_weights_dir() -> PathBuf {
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache/harbench/weights"),
        None => PathBuf::from("weights"),
    }
}

/// Fully resolved settings shared by `train` and `evaluate`; echoed into
/// `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub backbone: String,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub weights: WeightsMode,
    pub stub_seed: u64,
    pub weights_dir: PathBuf,
    pub threads: Option<usize>,
    pub plots: bool,
}

impl RunConfig {
    pub fn weight_source(&self) -> WeightSource {
        match self.weights {
            WeightsMode::Pretrained => WeightSource::Pretrained {
                dir: self.weights_dir.clone(),
            },
            WeightsMode::Stub => WeightSource::Stub { seed: self.stub_seed },
        }
    }
}

pub struct TrainFlags {
    pub manifest: Option<PathBuf>,
    pub backbone: Option<String>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub image_size: Option<usize>,
    pub reduction: Option<ReductionMode>,
    pub keep_best_val: bool,
    pub plots: bool,
}

pub struct CommonFlags {
    pub threads: Option<usize>,
    pub weights_dir: Option<PathBuf>,
    pub weights: Option<WeightsMode>,
    pub stub_seed: Option<u64>,
}

pub fn resolve_run(common: &CommonFlags, flags: TrainFlags, file: &FileConfig) -> Result<RunConfig, UsageError> {
    let d = TrainConfig::default();
    let adam = AdamParams {
        learning_rate: pick(flags.learning_rate, file.learning_rate, d.adam.learning_rate),
        beta1: file.beta1.unwrap_or(d.adam.beta1),
        beta2: file.beta2.unwrap_or(d.adam.beta2),
        epsilon: file.epsilon.unwrap_or(d.adam.epsilon),
    };
    let train = TrainConfig {
        adam,
        batch_size: pick(flags.batch_size, file.batch_size, d.batch_size),
        epochs: pick(flags.epochs, file.epochs, d.epochs),
        seed: pick(flags.seed, file.seed, d.seed),
        image_size: pick(flags.image_size, file.image_size, d.image_size),
        reduction: pick(flags.reduction, file.reduction, d.reduction),
        keep_best_val: flags.keep_best_val || file.keep_best_val.unwrap_or(false),
    };
    train.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(RunConfig {
        manifest: required(flags.manifest, file.manifest.clone(), "manifest")?,
        backbone: required(flags.backbone, file.backbone.clone(), "backbone")?,
        out: required(flags.out, file.out.clone(), "out")?,
        train,
        weights: pick(common.weights, file.weights, WeightsMode::Pretrained),
        stub_seed: pick(common.stub_seed, file.stub_seed, 0),
        weights_dir: pick(common.weights_dir.clone(), file.weights_dir.clone(), default_weights_dir()),
        threads: common.threads.or(file.threads),
        plots: flags.plots || file.plots.unwrap_or(false),
    })
}

pub fn default_stride() -> usize {
    DEFAULT_STRIDE
}

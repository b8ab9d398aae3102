//! Run configuration: one JSON document, with CLI flags overriding
//! individual fields so sweeps can be scripted without editing files.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use spherelift_core::trainer::{Precision, TrainConfig};
use spherelift_core::NetworkConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: PathBuf,
    #[serde(default)]
    pub train_signals: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub eval_signals: Option<PathBuf>,
    #[serde(default)]
    pub eval_labels: Option<PathBuf>,
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Seeds for the pooling comparison; empty means the training seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Pooling kinds for the comparison (names as in `PoolKind::parse`).
    #[serde(default)]
    pub kinds: Vec<String>,
}

pub fn load(path: &Path) -> CliResult<RunConfig> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("reading config {}: {e}", path.display())))?;
    serde_json::from_str(&body)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

/// Training-loop fields exposed as flags. Precedence for the seed:
/// `--seed` flag, then `SPHERELIFT_SEED`, then the config file.
#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) -> CliResult<()> {
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(s) = self.step_size {
            cfg.step_size = s;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(seed) = resolve_seed(self.seed)? {
            cfg.seed = seed;
        }
        if let Some(p) = self.precision {
            cfg.precision = match p {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        Ok(())
    }
}

/// Seed from the flag if given, else from SPHERELIFT_SEED, else None.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SPHERELIFT_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("SPHERELIFT_SEED is not a u64: {raw:?}"))),
        Err(_) => Ok(None),
    }
}

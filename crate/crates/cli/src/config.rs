//! Run configuration: JSON file plus flag overrides.
//!
//! Flag values take precedence over file values, and the fully resolved
//! config is echoed into the output directory before any work starts, so a
//! run can be reproduced from its own artifacts.

use addnet::model::ModelSpec;
use addnet::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::commands::CliError;

/// Model section: a named preset or a full inline spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Spec(Box<ModelSpec>),
}

impl ModelChoice {
    pub fn resolve(&self) -> Result<ModelSpec, CliError> {
        match self {
            ModelChoice::Spec(spec) => Ok(*spec.clone()),
            ModelChoice::Preset(name) => match name.as_str() {
                "addnet2d_default" => Ok(ModelSpec::addnet2d_default()),
                "addnet3d_default" => Ok(ModelSpec::addnet3d_default()),
                "addnet2d_desk" => Ok(ModelSpec::addnet2d_desk()),
                "miniature" => Ok(ModelSpec::miniature()),
                other => Err(CliError::config(format!("unknown model preset {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelChoice,
    #[serde(default)]
    pub train: TrainConfig,
    /// Dataset manifest path, relative to the current directory.
    pub manifest: Option<PathBuf>,
    /// Seed for parameter initialization.
    #[serde(default)]
    pub init_seed: u64,
    /// Alternate labels so full batches are half real, half fake.
    #[serde(default)]
    pub balanced: bool,
    /// Attention mask sigma; default is resolution-proportional.
    #[serde(default)]
    pub mask_sigma: Option<f64>,
    /// Mask cache directory.
    #[serde(default)]
    pub mask_cache: Option<PathBuf>,
}

/// Flag-level overrides for `train`.
#[derive(Debug, Default)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub steps: Option<u64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub mask_cache: Option<PathBuf>,
    pub balanced: Option<bool>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("read {}: {e}", path.display())))?;
    // serde_json errors carry line and column anchors.
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn apply_overrides(config: &mut RunConfig, overrides: &Overrides) {
    if let Some(m) = &overrides.manifest {
        config.manifest = Some(m.clone());
    }
    if let Some(steps) = overrides.steps {
        config.train.total_steps = steps;
    }
    if let Some(lr) = overrides.lr {
        config.train.base_lr = lr;
    }
    if let Some(bs) = overrides.batch_size {
        config.train.batch_size = bs;
    }
    if let Some(seed) = overrides.seed {
        config.train.seed = seed;
    }
    if let Some(cache) = &overrides.mask_cache {
        config.mask_cache = Some(cache.clone());
    }
    if let Some(balanced) = overrides.balanced {
        config.balanced = balanced;
    }
}

/// Pick the output directory: explicit flag, else `$ADDNET_OUT_ROOT/<sub>`.
pub fn resolve_out(flag: Option<PathBuf>, subcommand: &str) -> Result<PathBuf, CliError> {
    if let Some(path) = flag {
        return Ok(path);
    }
    match std::env::var_os("ADDNET_OUT_ROOT") {
        Some(root) => Ok(PathBuf::from(root).join(subcommand)),
        None => Err(CliError::config(
            "no --out given and ADDNET_OUT_ROOT is not set".into(),
        )),
    }
}

/// Refuse to write into an existing non-empty directory unless forced.
pub fn guard_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.is_dir() {
        let non_empty = std::fs::read_dir(dir)
            .map(|mut entries| entries.next().is_some())
            .unwrap_or(false);
        if non_empty && !force {
            return Err(CliError::config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("create {}: {e}", dir.display())))?;
    Ok(())
}

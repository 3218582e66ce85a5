//! `train`: run the training harness from a config file.
//!
//! Exit codes: 1 config, 2 divergence, 3 data.

use super::CliError;
use crate::config::{apply_overrides, guard_out_dir, load_run_config, resolve_out, Overrides};
use addnet::data::{load_manifest, DataError, SampleOptions};
use addnet::model::Detector;
use addnet::trainer::{config_fingerprint, train_on_manifest, TrainError};
use std::path::Path;

pub fn run(config_path: &Path, overrides: Overrides, force: bool) -> Result<(), CliError> {
    let mut config = load_run_config(config_path)?;
    let out = resolve_out(overrides.out.clone(), "train")?;
    apply_overrides(&mut config, &overrides);
    let spec = config.model.resolve()?;
    config
        .train
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    if config.train.mode != spec.mode {
        return Err(CliError::config(format!(
            "train mode {:?} does not match model mode {:?}",
            config.train.mode, spec.mode
        )));
    }
    let manifest_path = config
        .manifest
        .clone()
        .ok_or_else(|| CliError::config("no manifest in config or flags".into()))?;

    guard_out_dir(&out, force)?;
    // Echo the resolved config before any work; feeding it back reproduces
    // the run.
    let resolved = serde_json::to_string_pretty(&config)
        .map_err(|e| CliError::config(e.to_string()))?;
    std::fs::write(out.join("config.resolved.json"), resolved)
        .map_err(|e| CliError::config(e.to_string()))?;

    let manifest = load_manifest(&manifest_path).map_err(data_error)?;
    let mut detector =
        Detector::new(spec, config.init_seed).map_err(|e| CliError::config(e.to_string()))?;
    let opts = SampleOptions {
        shuffle: true,
        balanced: config.balanced,
        sigma: config.mask_sigma,
        mask_cache: config.mask_cache.clone(),
    };
    println!(
        "training {:?} for {} steps (batch {}, lr {}, fingerprint {})",
        config.train.mode,
        config.train.total_steps,
        config.train.batch_size,
        config.train.base_lr,
        config_fingerprint(&config.train),
    );
    let outcome = train_on_manifest(&mut detector, &manifest, &config.train, &opts, Some(&out))
        .map_err(train_error)?;
    if let Some((step, acc)) = outcome.best {
        println!(
            "done: {} steps; best held-out accuracy {:.4} at step {step}",
            outcome.final_step, acc
        );
    } else {
        println!("done: {} steps", outcome.final_step);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn data_error(err: DataError) -> CliError {
    CliError::Data(err.to_string())
}

fn train_error(err: TrainError) -> CliError {
    match err {
        TrainError::Divergence { step } => CliError::Divergence(format!("at step {step}")),
        TrainError::Data(e) => CliError::Data(e.to_string()),
        other => CliError::config(other.to_string()),
    }
}

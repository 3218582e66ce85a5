//! `eval`: score a checkpoint on one or more datasets and print an
//! accuracy table (networks as rows, datasets as columns).

use super::CliError;
use crate::config::guard_out_dir;
use addnet::data::{load_manifest, SampleOptions, Split};
use addnet::model::{load_checkpoint, Mode};
use addnet::trainer::{config_fingerprint, evaluate_clips, evaluate_images, EvalReport};
use std::path::{Path, PathBuf};

#[allow(clippy::too_many_arguments)]
pub fn run(
    checkpoint: &Path,
    manifest: Option<PathBuf>,
    datasets: &[String],
    split: &str,
    level: Option<&str>,
    batch_size: usize,
    out: Option<PathBuf>,
    force: bool,
) -> Result<(), CliError> {
    let (detector, step) =
        load_checkpoint(checkpoint).map_err(|e| CliError::Failed(e.to_string()))?;
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(CliError::Failed(format!("unknown split {other:?}"))),
    };
    if let Some(level) = level {
        let wanted = match level {
            "image" => Mode::Image,
            "sequence" | "clip" => Mode::Sequence,
            other => return Err(CliError::Failed(format!("unknown level {other:?}"))),
        };
        if wanted != detector.spec.mode {
            return Err(CliError::Failed(format!(
                "mode mismatch: checkpoint is {:?} but --level asked for {wanted:?}",
                detector.spec.mode
            )));
        }
    }

    let mut targets: Vec<(String, PathBuf)> = Vec::new();
    if let Some(path) = manifest {
        let name = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or("dataset")
            .to_string();
        targets.push((name, path));
    }
    for spec in datasets {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Failed(format!("--dataset wants name=path, got {spec:?}")))?;
        targets.push((name.to_string(), PathBuf::from(path)));
    }
    if targets.is_empty() {
        return Err(CliError::Failed(
            "no datasets: pass --manifest or --dataset name=path".into(),
        ));
    }

    let network = match detector.spec.mode {
        Mode::Image => "ADDNet-2D",
        Mode::Sequence => "ADDNet-3D",
    };
    let checkpoint_id = format!(
        "{}@step{step}",
        checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint")
    );
    let fingerprint = config_fingerprint(&detector.spec);

    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for (name, path) in &targets {
        let manifest = load_manifest(path).map_err(|e| CliError::Failed(e.to_string()))?;
        let mut report = match detector.spec.mode {
            Mode::Image => evaluate_images(
                &detector,
                &manifest,
                split,
                batch_size,
                &SampleOptions::default(),
            ),
            Mode::Sequence => {
                evaluate_clips(&detector, &manifest, split, &SampleOptions::default())
            }
        }
        .map_err(|e| CliError::Failed(e.to_string()))?;
        report.dataset = name.clone();
        report.checkpoint_id = checkpoint_id.clone();
        report.config_fingerprint = fingerprint.clone();
        reports.push((name.clone(), report));
    }

    // Header row of dataset names, one row per network.
    let mut header = format!("{:<12}", "Network");
    let mut row = format!("{network:<12}");
    for (name, report) in &reports {
        header.push_str(&format!(" {:>14}", name));
        row.push_str(&format!(" {:>13.2}%", 100.0 * report.accuracy));
    }
    println!("{header}");
    println!("{row}");

    if let Some(out) = out {
        guard_out_dir(&out, force)?;
        for (name, report) in &reports {
            let text = serde_json::to_string_pretty(report)
                .map_err(|e| CliError::Failed(e.to_string()))?;
            std::fs::write(out.join(format!("eval_{name}.json")), text)
                .map_err(|e| CliError::Failed(e.to_string()))?;
        }
    }
    Ok(())
}

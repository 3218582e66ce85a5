//! Subcommand implementations and the exit-code policy.
//!
//! `train` distinguishes config (1), divergence (2) and data (3) failures;
//! every other subcommand exits 1 on any failure.

pub mod eval;
pub mod maskgen;
pub mod synth;
pub mod train;
pub mod visualize;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn config(msg: String) -> Self {
        CliError::Config(msg)
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Failed(_) => 1,
            CliError::Divergence(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

/// Sorted .png stems of a directory.
pub fn png_stems(dir: &std::path::Path) -> Result<Vec<String>, CliError> {
    let mut stems = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::config(format!("read {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::config(e.to_string()))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

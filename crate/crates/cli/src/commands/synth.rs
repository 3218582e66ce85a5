//! `synth`: labeled synthetic corpus via attention-based face fusion.

use super::{png_stems, CliError};
use crate::config::resolve_out;
use addnet::data::write_manifest;
use addnet::fusion::{build_synthetic_corpus, CorpusOptions};
use addnet::geometry::{parse_landmarks_text, Landmark68};
use addnet::image::Image;
use std::path::{Path, PathBuf};

#[allow(clippy::too_many_arguments)]
pub fn run(
    pool_dir: &Path,
    n_real: usize,
    n_fake: usize,
    seed: u64,
    out: Option<PathBuf>,
    size: usize,
    test_fraction: f64,
    force: bool,
) -> Result<(), CliError> {
    let manifest_path = match out {
        Some(path) => path,
        None => resolve_out(None, "synth")?.join("manifest.jsonl"),
    };
    if manifest_path.exists() && !force {
        return Err(CliError::config(format!(
            "{} already exists; pass --force to overwrite",
            manifest_path.display()
        )));
    }
    let out_dir = manifest_path
        .parent()
        .ok_or_else(|| CliError::config("manifest path has no parent directory".into()))?
        .to_path_buf();
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::config(e.to_string()))?;

    let pool = load_pool(pool_dir)?;
    println!("pool: {} identities from {}", pool.len(), pool_dir.display());
    let opts = CorpusOptions {
        output_size: (size, size),
        test_fraction,
        ..Default::default()
    };
    let sequences = build_synthetic_corpus(&pool, n_real, n_fake, seed, &out_dir, &opts)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    write_manifest(&manifest_path, &sequences).map_err(|e| CliError::Data(e.to_string()))?;
    let test = sequences
        .iter()
        .filter(|s| s.split == addnet::data::Split::Test)
        .count();
    println!(
        "wrote {} sequences ({n_real} real / {n_fake} fake, {test} test) to {}",
        sequences.len(),
        manifest_path.display()
    );
    Ok(())
}

fn load_pool(dir: &Path) -> Result<Vec<(Image, Landmark68)>, CliError> {
    let stems = png_stems(dir)?;
    if stems.is_empty() {
        return Err(CliError::Failed(format!(
            "pool directory {} has no .png faces",
            dir.display()
        )));
    }
    let mut pool = Vec::with_capacity(stems.len());
    for stem in stems {
        let image = Image::load_png(&dir.join(format!("{stem}.png")))
            .map_err(|e| CliError::Data(e.to_string()))?;
        let text = std::fs::read_to_string(dir.join(format!("{stem}.landmarks.txt")))
            .map_err(|e| CliError::Data(format!("{stem}: {e}")))?;
        let landmarks = parse_landmarks_text(&text).map_err(|e| CliError::Data(e.to_string()))?;
        pool.push((image, landmarks));
    }
    Ok(pool)
}

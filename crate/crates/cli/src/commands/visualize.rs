//! `visualize`: mask plus overlay images for eyeballing the attention
//! geometry.

use super::{maskgen::write_overlay, png_stems, CliError};
use crate::config::{guard_out_dir, resolve_out};
use addnet::geometry::parse_landmarks_text;
use addnet::image::{quantize, Image};
use addnet::maskgen::{default_sigma, generate_attention_mask};
use std::path::{Path, PathBuf};

pub fn run(
    images: &Path,
    landmarks_dir: Option<&Path>,
    out: Option<PathBuf>,
    sigma: Option<f64>,
    force: bool,
) -> Result<(), CliError> {
    let out = resolve_out(out, "visualize")?;
    guard_out_dir(&out, force)?;
    let landmarks_dir = landmarks_dir.unwrap_or(images);
    let stems = png_stems(images)?;
    let mut ok = 0usize;
    let mut failed = 0usize;
    for stem in &stems {
        match one(images, landmarks_dir, &out, stem, sigma) {
            Ok(()) => ok += 1,
            Err(e) => {
                failed += 1;
                eprintln!("warning: {stem}: {e}");
            }
        }
    }
    println!("{ok} ok / {failed} failed");
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} images failed")));
    }
    Ok(())
}

fn one(
    images: &Path,
    landmarks_dir: &Path,
    out: &Path,
    stem: &str,
    sigma: Option<f64>,
) -> Result<(), String> {
    let image = Image::load_png(&images.join(format!("{stem}.png"))).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(landmarks_dir.join(format!("{stem}.landmarks.txt")))
        .map_err(|e| e.to_string())?;
    let landmarks = parse_landmarks_text(&text).map_err(|e| e.to_string())?;
    let size = (image.width(), image.height());
    let sigma = sigma.unwrap_or_else(|| default_sigma(size));
    let (mask, _) = generate_attention_mask(&landmarks, size, sigma).map_err(|e| e.to_string())?;
    let bytes: Vec<u8> = mask.values().iter().map(|&v| quantize(v)).collect();
    Image::from_u8(size.0, size.1, 1, &bytes)
        .save_png(&out.join(format!("{stem}.mask.png")))
        .map_err(|e| e.to_string())?;
    write_overlay(&image, mask.values(), &out.join(format!("{stem}.overlay.png")))
}

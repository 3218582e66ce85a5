//! `maskgen`: one attention mask per input face image.

use super::{png_stems, CliError};
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
    overlay: bool,
    force: bool,
) -> Result<(), CliError> {
    let out = resolve_out(out, "maskgen")?;
    guard_out_dir(&out, force)?;
    let landmarks_dir = landmarks_dir.unwrap_or(images);
    let stems = png_stems(images)?;
    let mut ok = 0usize;
    let mut failed = 0usize;
    for stem in &stems {
        match process_one(images, landmarks_dir, &out, stem, sigma, overlay) {
            Ok(warnings) => {
                ok += 1;
                for w in warnings {
                    eprintln!("warning: {stem}: {w}");
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("warning: {stem}: {e}");
            }
        }
    }
    println!("{ok} ok / {failed} failed");
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} images failed",
            stems.len()
        )));
    }
    Ok(())
}

fn process_one(
    images: &Path,
    landmarks_dir: &Path,
    out: &Path,
    stem: &str,
    sigma: Option<f64>,
    overlay: bool,
) -> Result<Vec<String>, String> {
    let image = Image::load_png(&images.join(format!("{stem}.png"))).map_err(|e| e.to_string())?;
    let lm_path = landmarks_dir.join(format!("{stem}.landmarks.txt"));
    let text = std::fs::read_to_string(&lm_path)
        .map_err(|e| format!("landmarks {}: {e}", lm_path.display()))?;
    let landmarks = parse_landmarks_text(&text).map_err(|e| e.to_string())?;
    let size = (image.width(), image.height());
    let sigma = sigma.unwrap_or_else(|| default_sigma(size));
    let (mask, warnings) =
        generate_attention_mask(&landmarks, size, sigma).map_err(|e| e.to_string())?;
    let mask_bytes: Vec<u8> = mask.values().iter().map(|&v| quantize(v)).collect();
    let mask_img = Image::from_u8(size.0, size.1, 1, &mask_bytes);
    mask_img
        .save_png(&out.join(format!("{stem}.mask.png")))
        .map_err(|e| e.to_string())?;
    if overlay {
        write_overlay(&image, mask.values(), &out.join(format!("{stem}.overlay.png")))?;
    }
    Ok(warnings.iter().map(|w| w.to_string()).collect())
}

/// Red-tinted composite of the face and its mask.
pub fn write_overlay(image: &Image, mask: &[f64], path: &Path) -> Result<(), String> {
    let (w, h) = (image.width(), image.height());
    let mut overlay = Image::new(w, h, 3);
    let n = w * h;
    for i in 0..n {
        let m = mask[i];
        for c in 0..3 {
            let source = if image.channels() == 1 {
                image.plane(0)[i]
            } else {
                image.plane(c)[i]
            };
            let tint = if c == 0 { m } else { 0.0 };
            overlay.data_mut()[c * n + i] = (source * (1.0 - 0.5 * m) + 0.5 * tint).min(1.0);
        }
    }
    overlay.save_png(path).map_err(|e| e.to_string())
}

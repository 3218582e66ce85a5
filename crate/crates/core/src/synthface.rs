//! Procedural face fixtures: rendered face images with exactly consistent
//! 68-point landmarks.
//!
//! These stand in for detector-cropped faces at desk scale. Identities are
//! drawn from a continuous parameter space (colors, geometry jitter, grain)
//! so a classifier cannot memorize a palette; the matching landmarks are
//! produced by transforming one canonical layout, which keeps eye and mouth
//! centers exact for alignment tests.

use crate::geometry::{
    format_landmarks_text, Landmark68, SimilarityTransform, NUM_LANDMARKS,
};
use crate::image::Image;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Canonical landmark layout for a `w x h` crop: eye centers at
/// (0.35w, 0.40h) and (0.65w, 0.40h), mouth center at (0.50w, 0.75h).
pub fn canonical_landmarks(w: usize, h: usize) -> Landmark68 {
    let (w, h) = (w as f64, h as f64);
    let mut pts = vec![(0.0, 0.0); NUM_LANDMARKS];

    // Jaw: half ellipse from temple to temple through the chin.
    for k in 0..17 {
        let phi = std::f64::consts::PI * k as f64 / 16.0;
        pts[k] = (0.5 * w - 0.30 * w * phi.cos(), 0.40 * h + 0.50 * h * phi.sin());
    }
    // Eyebrows: shallow arcs above each eye.
    for k in 0..5 {
        let t = k as f64 / 4.0 - 0.5;
        let lift = 0.02 * h * (1.0 - (2.0 * t) * (2.0 * t));
        pts[17 + k] = (0.35 * w + 0.18 * w * t, 0.31 * h - lift);
        pts[22 + k] = (0.65 * w + 0.18 * w * t, 0.31 * h - lift);
    }
    // Nose: bridge column then nostril base row.
    for k in 0..4 {
        pts[27 + k] = (0.50 * w, 0.42 * h + 0.05 * h * k as f64);
    }
    for k in 0..5 {
        pts[31 + k] = (0.44 * w + 0.03 * w * k as f64, 0.62 * h);
    }
    // Eyes: 6-point rings, symmetric so the mean is the exact center.
    ring(&mut pts, 36, 6, (0.35 * w, 0.40 * h), 0.06 * w, 0.035 * h);
    ring(&mut pts, 42, 6, (0.65 * w, 0.40 * h), 0.06 * w, 0.035 * h);
    // Mouth: 12-point outer ring and 8-point inner ring.
    ring(&mut pts, 48, 12, (0.50 * w, 0.75 * h), 0.10 * w, 0.08 * h);
    ring(&mut pts, 60, 8, (0.50 * w, 0.75 * h), 0.05 * w, 0.04 * h);

    Landmark68::new(pts).expect("canonical layout is valid")
}

fn ring(pts: &mut [(f64, f64)], start: usize, n: usize, c: (f64, f64), rx: f64, ry: f64) {
    for k in 0..n {
        let a = std::f64::consts::TAU * k as f64 / n as f64;
        pts[start + k] = (c.0 + rx * a.cos(), c.1 + ry * a.sin());
    }
}

/// One synthetic identity: colors, pose jitter and grain.
#[derive(Debug, Clone)]
pub struct FaceParams {
    pub skin: [f64; 3],
    pub lips: [f64; 3],
    pub iris: [f64; 3],
    pub brow: [f64; 3],
    pub background: [f64; 3],
    pub pose: SimilarityTransform,
    pub grain_seed: u64,
    pub grain_amplitude: f64,
}

impl FaceParams {
    pub fn sample<R: Rng>(rng: &mut R, size: (usize, usize)) -> Self {
        let jitter = 0.03 * size.0.min(size.1) as f64;
        FaceParams {
            skin: [
                rng.gen_range(0.45..0.95),
                rng.gen_range(0.35..0.75),
                rng.gen_range(0.25..0.65),
            ],
            lips: [
                rng.gen_range(0.55..0.85),
                rng.gen_range(0.15..0.40),
                rng.gen_range(0.20..0.45),
            ],
            iris: [
                rng.gen_range(0.05..0.55),
                rng.gen_range(0.15..0.55),
                rng.gen_range(0.25..0.75),
            ],
            brow: [
                rng.gen_range(0.05..0.35),
                rng.gen_range(0.05..0.30),
                rng.gen_range(0.05..0.25),
            ],
            background: [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ],
            pose: SimilarityTransform {
                scale: rng.gen_range(0.92..1.08),
                rotation: rng.gen_range(-0.10..0.10),
                translation: (rng.gen_range(-jitter..jitter), rng.gen_range(-jitter..jitter)),
            },
            grain_seed: rng.gen(),
            grain_amplitude: rng.gen_range(0.005..0.02),
        }
    }
}

/// Render the identity at the given size, with landmarks mapped through the
/// same pose transform the painter uses.
pub fn render_face(params: &FaceParams, size: (usize, usize)) -> (Image, Landmark68) {
    let (w, h) = size;
    let (wf, hf) = (w as f64, h as f64);
    let mut img = Image::new(w, h, 3);
    let inv = params.pose.inverse();
    for y in 0..h {
        for x in 0..w {
            let p = inv.apply((x as f64, y as f64));
            let mut rgb = paint(params, p, wf, hf);
            let g = grain(params.grain_seed, x as u64, y as u64) * params.grain_amplitude;
            for (c, v) in rgb.iter_mut().enumerate() {
                img.set(c, x, y, (*v + g).clamp(0.0, 1.0));
            }
        }
    }
    let landmarks = canonical_landmarks(w, h).map(&params.pose);
    (img, landmarks)
}

fn inside(p: (f64, f64), c: (f64, f64), rx: f64, ry: f64) -> bool {
    let dx = (p.0 - c.0) / rx;
    let dy = (p.1 - c.1) / ry;
    dx * dx + dy * dy <= 1.0
}

fn paint(params: &FaceParams, p: (f64, f64), w: f64, h: f64) -> [f64; 3] {
    // Painted shapes track the canonical landmark geometry.
    if inside(p, (0.50 * w, 0.75 * h), 0.05 * w, 0.04 * h) {
        return [0.15, 0.05, 0.05]; // mouth opening
    }
    if inside(p, (0.50 * w, 0.75 * h), 0.10 * w, 0.08 * h) {
        return params.lips;
    }
    for ex in [0.35, 0.65] {
        if inside(p, (ex * w, 0.40 * h), 0.022 * w, 0.022 * h) {
            return params.iris;
        }
        if inside(p, (ex * w, 0.40 * h), 0.06 * w, 0.035 * h) {
            return [0.93, 0.93, 0.93]; // sclera
        }
        if inside(p, (ex * w, 0.305 * h), 0.095 * w, 0.016 * h) {
            return params.brow;
        }
    }
    if inside(p, (0.50 * w, 0.54 * h), 0.045 * w, 0.10 * h) {
        return [
            params.skin[0] * 0.88,
            params.skin[1] * 0.88,
            params.skin[2] * 0.88,
        ]; // nose shading
    }
    if inside(p, (0.50 * w, 0.55 * h), 0.33 * w, 0.40 * h) {
        return params.skin;
    }
    params.background
}

/// Deterministic per-pixel grain in [-1, 1] (splitmix-style hash).
fn grain(seed: u64, x: u64, y: u64) -> f64 {
    let mut z = seed ^ x.wrapping_mul(0x9E3779B97F4A7C15) ^ y.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    (z as f64 / u64::MAX as f64) * 2.0 - 1.0
}

/// A randomly posed, slightly jittered landmark set (no image), for mask
/// fixtures.
pub fn random_landmarks<R: Rng>(rng: &mut R, size: (usize, usize)) -> Landmark68 {
    let base = canonical_landmarks(size.0, size.1);
    let jitter = 0.02 * size.0.min(size.1) as f64;
    let pose = SimilarityTransform {
        scale: rng.gen_range(0.92..1.05),
        rotation: rng.gen_range(-0.10..0.10),
        translation: (rng.gen_range(-jitter..jitter), rng.gen_range(-jitter..jitter)),
    };
    let moved = base.map(&pose);
    let pts = moved
        .points()
        .iter()
        .map(|&(x, y)| (x + rng.gen_range(-0.5..0.5), y + rng.gen_range(-0.5..0.5)))
        .collect();
    Landmark68::new(pts).expect("jittered landmarks stay finite")
}

/// Write `count` identities into `dir` as `face_<i>.png` plus landmark
/// sidecars. Returns the identity stems.
pub fn write_pool(
    dir: &Path,
    count: usize,
    size: (usize, usize),
    seed: u64,
) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stems = Vec::with_capacity(count);
    for i in 0..count {
        let params = FaceParams::sample(&mut rng, size);
        let (img, lm) = render_face(&params, size);
        let stem = format!("face_{i:04}");
        img.save_png(&dir.join(format!("{stem}.png")))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        std::fs::write(
            dir.join(format!("{stem}.landmarks.txt")),
            format_landmarks_text(&lm),
        )?;
        stems.push(stem);
    }
    Ok(stems)
}

/// Write `count` rendered sequences of `frames_each` frames under `dir`
/// using the dataset layout, and return manifest records (all in the train
/// split, labels alternating 0/1; adjust before writing the manifest).
/// Frames of one sequence share an identity and differ only in grain.
pub fn write_sequence_corpus(
    dir: &Path,
    count: usize,
    frames_each: usize,
    size: (usize, usize),
    seed: u64,
) -> std::io::Result<Vec<crate::data::FaceSequence>> {
    use crate::data::{FaceSequence, FrameRecord, Split};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(count);
    for i in 0..count {
        let mut params = FaceParams::sample(&mut rng, size);
        let seq_id = format!("seq_{i:03}");
        let seq_dir = dir.join(&seq_id);
        std::fs::create_dir_all(&seq_dir)?;
        let mut frames = Vec::with_capacity(frames_each);
        for f in 0..frames_each {
            params.grain_seed = params.grain_seed.wrapping_add(f as u64);
            let (img, lm) = render_face(&params, size);
            img.save_png(&seq_dir.join(format!("{f}.png")))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            std::fs::write(
                seq_dir.join(format!("{f}.landmarks.txt")),
                format_landmarks_text(&lm),
            )?;
            frames.push(FrameRecord {
                index: f as u64,
                image: format!("{seq_id}/{f}.png"),
                landmarks: Some(format!("{seq_id}/{f}.landmarks.txt")),
                landmarks_xy: None,
            });
        }
        sequences.push(FaceSequence {
            sequence_id: seq_id,
            label: (i % 2) as u8,
            split: Split::Train,
            source_tag: format!("identity_{i}"),
            frames,
        });
    }
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{estimate_alignment, CanonicalLayout};

    #[test]
    fn canonical_centers_are_exact() {
        let lm = canonical_landmarks(128, 128);
        let re = lm.right_eye_center();
        let le = lm.left_eye_center();
        let m = lm.mouth_center();
        assert!((re.0 - 0.35 * 128.0).abs() < 1e-9 && (re.1 - 0.40 * 128.0).abs() < 1e-9);
        assert!((le.0 - 0.65 * 128.0).abs() < 1e-9 && (le.1 - 0.40 * 128.0).abs() < 1e-9);
        assert!((m.0 - 0.50 * 128.0).abs() < 1e-9 && (m.1 - 0.75 * 128.0).abs() < 1e-9);
    }

    #[test]
    fn canonical_layout_aligns_to_identity() {
        let lm = canonical_landmarks(96, 96);
        let t = estimate_alignment(&lm, &CanonicalLayout::default(), (96, 96)).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!(t.rotation.abs() < 1e-9);
    }

    #[test]
    fn render_is_deterministic_per_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = FaceParams::sample(&mut rng, (48, 48));
        let (a, la) = render_face(&params, (48, 48));
        let (b, lb) = render_face(&params, (48, 48));
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn pool_writes_images_and_sidecars() {
        let dir = tempfile::tempdir().unwrap();
        let stems = write_pool(dir.path(), 3, (32, 32), 5).unwrap();
        assert_eq!(stems.len(), 3);
        for stem in &stems {
            assert!(dir.path().join(format!("{stem}.png")).exists());
            assert!(dir.path().join(format!("{stem}.landmarks.txt")).exists());
        }
    }
}

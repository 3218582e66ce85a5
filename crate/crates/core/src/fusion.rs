//! Attention-based face fusion.
//!
//! The fused face is the per-pixel convex blend `O = t (1 - A) + g A` of a
//! source face `t` and a generated face `g` under the attention mask `A`.
//! Where `A = 0` the source passes through bit-exactly, where `A = 1` the
//! generated face replaces it. The same operation synthesizes labeled fake
//! faces at desk scale: a donor face warped onto the source geometry stands
//! in for a network-generated face, which is enough to carry the fusion
//! seams a detector learns from.

use crate::data::{DataError, FaceSequence, FrameRecord, Split};
use crate::geometry::{
    estimate_alignment, format_landmarks_text, warp_face, CanonicalLayout, GeometryError,
    Landmark68,
};
use crate::image::{Image, ImageError};
use crate::maskgen::{default_sigma, generate_attention_mask, AttentionMask, MaskError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient pool: {0}")]
    InsufficientPool(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Inputs to the fusion: source face `t`, generated face `g`, attention
/// mask `A`, all spatially congruent. The all-ones counterpart of `A` is
/// implicit in the `1 - A` term.
pub struct FusionInputs<'a> {
    pub source: &'a Image,
    pub generated: &'a Image,
    pub mask: &'a AttentionMask,
}

/// Per-pixel, per-channel convex blend of source and generated face.
pub fn fuse(inputs: &FusionInputs) -> Result<Image, FusionError> {
    let t = inputs.source;
    let g = inputs.generated;
    let a = inputs.mask;
    if !t.same_shape(g) {
        return Err(FusionError::ShapeMismatch(format!(
            "source {}x{}x{} vs generated {}x{}x{}",
            t.width(),
            t.height(),
            t.channels(),
            g.width(),
            g.height(),
            g.channels()
        )));
    }
    if a.width() != t.width() || a.height() != t.height() {
        return Err(FusionError::ShapeMismatch(format!(
            "mask {}x{} vs image {}x{}",
            a.width(),
            a.height(),
            t.width(),
            t.height()
        )));
    }
    let n = t.width() * t.height();
    let mut out = Image::new(t.width(), t.height(), t.channels());
    for c in 0..t.channels() {
        let tp = t.plane(c);
        let gp = g.plane(c);
        let op = &mut out.data_mut()[c * n..(c + 1) * n];
        for i in 0..n {
            let av = a.values()[i];
            op[i] = tp[i] * (1.0 - av) + gp[i] * av;
        }
    }
    Ok(out)
}

/// A labeled fake face in the canonical frame: the donor is warped onto
/// the source geometry and fused under the source's attention mask.
///
/// The seed jitters the mask sigma by up to ±10% so corpora carry seams of
/// varying softness; everything is deterministic given the seed.
pub fn synth_fake(
    source: (&Image, &Landmark68),
    donor: (&Image, &Landmark68),
    layout: &CanonicalLayout,
    output_size: (usize, usize),
    sigma: f64,
    rng_seed: u64,
) -> Result<(Image, Landmark68), FusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let sigma = sigma * rng.gen_range(0.9..1.1);
    let (aligned_src, src_landmarks) = align_to_canonical(source.0, source.1, layout, output_size)?;
    let (aligned_donor, _) = align_to_canonical(donor.0, donor.1, layout, output_size)?;
    let (mask, _warnings) = generate_attention_mask(&src_landmarks, output_size, sigma)?;
    let fused = fuse(&FusionInputs {
        source: &aligned_src,
        generated: &aligned_donor,
        mask: &mask,
    })?;
    Ok((fused, src_landmarks))
}

/// Warp a face into the canonical frame.
pub fn align_to_canonical(
    image: &Image,
    landmarks: &Landmark68,
    layout: &CanonicalLayout,
    output_size: (usize, usize),
) -> Result<(Image, Landmark68), FusionError> {
    let transform = estimate_alignment(landmarks, layout, output_size)?;
    Ok(warp_face(image, landmarks, &transform, output_size))
}

/// Options for [`build_synthetic_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub output_size: (usize, usize),
    /// Mask sigma before per-sample jitter; `None` uses the default.
    pub sigma: Option<f64>,
    /// Fraction of samples (and pool identities) reserved for the test split.
    pub test_fraction: f64,
    pub layout: CanonicalLayout,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            output_size: (64, 64),
            sigma: None,
            test_fraction: 0.2,
            layout: CanonicalLayout::default(),
        }
    }
}

/// A desk-scale labeled corpus: `n_real` aligned untouched faces (label 0)
/// and `n_fake` fused pairs (label 1), written as single-frame sequences
/// under `out_dir`.
///
/// Pool identities are partitioned between train and test before any
/// sampling, so no identity ever straddles the split. Returns the sequence
/// records in the manifest schema (write them with
/// [`crate::data::write_manifest`]).
pub fn build_synthetic_corpus(
    pool: &[(Image, Landmark68)],
    n_real: usize,
    n_fake: usize,
    rng_seed: u64,
    out_dir: &Path,
    opts: &CorpusOptions,
) -> Result<Vec<FaceSequence>, FusionError> {
    if pool.len() < 2 {
        return Err(FusionError::InsufficientPool(format!(
            "need at least 2 pool faces, got {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut identities: Vec<usize> = (0..pool.len()).collect();
    rand::seq::SliceRandom::shuffle(&mut identities[..], &mut rng);
    let n_test_ids = ((opts.test_fraction * pool.len() as f64).round() as usize).min(pool.len());
    let (test_ids, train_ids) = identities.split_at(n_test_ids);

    let quota = |total: usize| -> (usize, usize) {
        let test = (opts.test_fraction * total as f64).round() as usize;
        (total - test, test)
    };
    let (train_real, test_real) = quota(n_real);
    let (train_fake, test_fake) = quota(n_fake);
    for (side, ids, fakes) in [
        ("train", train_ids, train_fake),
        ("test", test_ids, test_fake),
    ] {
        if fakes > 0 && ids.len() < 2 {
            return Err(FusionError::InsufficientPool(format!(
                "{side} split has {} identities but needs 2 for fusion pairs",
                ids.len()
            )));
        }
        if (fakes > 0 || quota(n_real).1 > 0) && ids.is_empty() && side == "test" {
            return Err(FusionError::InsufficientPool(
                "test split has no identities".into(),
            ));
        }
    }

    let sigma = opts.sigma.unwrap_or_else(|| default_sigma(opts.output_size));
    let mut sequences = Vec::with_capacity(n_real + n_fake);
    let mut sample_index = 0u64;
    for (split, ids, reals, fakes) in [
        (Split::Train, train_ids, train_real, train_fake),
        (Split::Test, test_ids, test_real, test_fake),
    ] {
        if (reals > 0 || fakes > 0) && ids.is_empty() {
            return Err(FusionError::InsufficientPool(format!(
                "{split} split has no identities for its {} samples",
                reals + fakes
            )));
        }
        for k in 0..reals {
            let id = ids[rng.gen_range(0..ids.len())];
            let (face, lm) = &pool[id];
            let (aligned, aligned_lm) =
                align_to_canonical(face, lm, &opts.layout, opts.output_size)?;
            let seq_id = format!("real_{split}_{k:05}");
            sequences.push(write_sample(
                out_dir,
                &seq_id,
                0,
                split,
                format!("id{id}"),
                &aligned,
                &aligned_lm,
            )?);
            sample_index += 1;
        }
        for k in 0..fakes {
            let src = ids[rng.gen_range(0..ids.len())];
            let donor = loop {
                let d = ids[rng.gen_range(0..ids.len())];
                if d != src {
                    break d;
                }
            };
            let sub_seed = sub_seed(rng_seed, sample_index);
            let (fused, lm) = synth_fake(
                (&pool[src].0, &pool[src].1),
                (&pool[donor].0, &pool[donor].1),
                &opts.layout,
                opts.output_size,
                sigma,
                sub_seed,
            )?;
            let seq_id = format!("fake_{split}_{k:05}");
            sequences.push(write_sample(
                out_dir,
                &seq_id,
                1,
                split,
                format!("id{src}>id{donor}"),
                &fused,
                &lm,
            )?);
            sample_index += 1;
        }
    }
    Ok(sequences)
}

/// Deterministic per-sample seed from (corpus seed, sample index).
fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z ^ (z >> 31)
}

fn write_sample(
    out_dir: &Path,
    seq_id: &str,
    label: u8,
    split: Split,
    source_tag: String,
    image: &Image,
    landmarks: &Landmark68,
) -> Result<FaceSequence, FusionError> {
    let dir = out_dir.join(seq_id);
    std::fs::create_dir_all(&dir)?;
    image.save_png(&dir.join("0.png"))?;
    std::fs::write(dir.join("0.landmarks.txt"), format_landmarks_text(landmarks))?;
    Ok(FaceSequence {
        sequence_id: seq_id.to_string(),
        label,
        split,
        source_tag,
        frames: vec![FrameRecord {
            index: 0,
            image: format!("{seq_id}/0.png"),
            landmarks: Some(format!("{seq_id}/0.landmarks.txt")),
            landmarks_xy: None,
        }],
    })
}

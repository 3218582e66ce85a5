//! Training objective, optimization schedule, evaluation and reporting.
//!
//! Cross-entropy over two logits, Adam with a staircase learning-rate
//! decay (factor 0.9 every 3000 steps from 1e-4), periodic checkpoints
//! with best-held-out-accuracy selection, and exact-count accuracy
//! reports. Batch gradients are averaged over per-sample backward passes;
//! samples are processed in parallel but reduced in a fixed order, so runs
//! are bitwise reproducible for a given seed.

use crate::data::{
    sample_images, ClipBatch, DataError, DatasetManifest, ImageBatch, ImageStream, SampleOptions,
    Split,
};
use crate::maskgen::{build_mask_pyramid, MaskError, MaskPyramid};
use crate::model::{
    addnet2d_forward, addnet3d_forward, backward2d, backward3d, save_checkpoint, Detector, Mode,
    ModelError, Params, NUM_CLASSES,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: u64 },
    #[error("mode mismatch: model is {model:?} but the data stream yields {data}")]
    ModeMismatch { model: Mode, data: &'static str },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub total_steps: u64,
    pub seed: u64,
    /// Fraction of the train split held out for best-checkpoint selection.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Image,
            batch_size: 32,
            base_lr: 1e-4,
            decay_factor: 0.9,
            decay_every: 3000,
            total_steps: 40_000,
            seed: 0,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(TrainError::InvalidConfig("base_lr must be > 0".into()));
        }
        if !self.decay_factor.is_finite() || self.decay_factor <= 0.0 || self.decay_factor > 1.0 {
            return Err(TrainError::InvalidConfig(
                "decay_factor must be in (0, 1]".into(),
            ));
        }
        if self.decay_every == 0 {
            return Err(TrainError::InvalidConfig("decay_every must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(TrainError::InvalidConfig(
                "holdout_fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Staircase schedule: `base_lr * decay_factor^(step / decay_every)`.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    config.base_lr * config.decay_factor.powi((step / config.decay_every) as i32)
}

/// Numerically stable `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: [f64; NUM_CLASSES], label: u8) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label as usize]
}

pub fn softmax(logits: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let sum = e[0] + e[1];
    [e[0] / sum, e[1] / sum]
}

/// `dL/dlogits` for the cross-entropy loss.
pub fn cross_entropy_grad(logits: [f64; NUM_CLASSES], label: u8) -> [f64; NUM_CLASSES] {
    let mut g = softmax(logits);
    g[label as usize] -= 1.0;
    g
}

/// Argmax decision; an exact logit tie resolves to label 0.
pub fn predict_label(logits: [f64; NUM_CLASSES]) -> u8 {
    if logits[1] > logits[0] {
        1
    } else {
        0
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam with the standard published defaults; only the learning rate moves
/// (by the staircase schedule).
pub struct Adam {
    m: Params,
    v: Params,
    t: u64,
}

impl Adam {
    pub fn new(detector: &Detector) -> Self {
        Adam {
            m: Params::zeros(&detector.spec),
            v: Params::zeros(&detector.spec),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name);
            let m = self.m.get_mut(name);
            let v = self.v.get_mut(name);
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = ADAM_BETA1 * m.data()[i] + (1.0 - ADAM_BETA1) * gi;
                let vi = ADAM_BETA2 * v.data()[i] + (1.0 - ADAM_BETA2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// A batch of either kind; sources must match the model mode.
#[derive(Clone)]
pub enum Batch {
    Images(ImageBatch),
    Clips(ClipBatch),
}

pub trait BatchSource {
    fn next(&mut self) -> Result<Batch, DataError>;
}

impl BatchSource for ImageStream {
    fn next(&mut self) -> Result<Batch, DataError> {
        Ok(Batch::Images(self.next_batch()?))
    }
}

impl BatchSource for crate::data::ClipStream {
    fn next(&mut self) -> Result<Batch, DataError> {
        Ok(Batch::Clips(self.next_batch()?))
    }
}

/// Replays one batch forever; used for memorization and divergence tests.
pub struct FixedBatch(pub Batch);

impl BatchSource for FixedBatch {
    fn next(&mut self) -> Result<Batch, DataError> {
        Ok(self.0.clone())
    }
}

/// Mean loss, batch accuracy and mean parameter gradients for one batch.
///
/// Per-sample passes run in parallel; the reduction walks samples in index
/// order so the sums are bitwise deterministic.
pub fn batch_gradients(detector: &Detector, batch: &Batch) -> Result<(f64, f64, Params), TrainError> {
    let spec = &detector.spec;
    let targets = spec.pyramid_targets();
    let per_sample: Vec<Result<(f64, bool, Params), TrainError>> = match batch {
        Batch::Images(images) => {
            if spec.mode != Mode::Image {
                return Err(TrainError::ModeMismatch {
                    model: spec.mode,
                    data: "image batches",
                });
            }
            images
                .images
                .par_iter()
                .zip(&images.masks)
                .zip(&images.labels)
                .map(|((image, mask), &label)| {
                    let pyramid = build_mask_pyramid(mask, &targets)?;
                    let fwd = addnet2d_forward(spec, &detector.params, image, Some(&pyramid))?;
                    let loss = cross_entropy(fwd.logits, label);
                    let correct = predict_label(fwd.logits) == label;
                    let dlogits = cross_entropy_grad(fwd.logits, label);
                    let (grads, _) = backward2d(spec, &detector.params, &fwd, dlogits, false);
                    Ok((loss, correct, grads))
                })
                .collect()
        }
        Batch::Clips(clips) => {
            if spec.mode != Mode::Sequence {
                return Err(TrainError::ModeMismatch {
                    model: spec.mode,
                    data: "clip batches",
                });
            }
            clips
                .clips
                .par_iter()
                .zip(&clips.masks)
                .zip(&clips.labels)
                .map(|((clip, masks), &label)| {
                    let pyramids: Vec<MaskPyramid> = masks
                        .iter()
                        .map(|m| build_mask_pyramid(m, &targets))
                        .collect::<Result<_, _>>()?;
                    let fwd = addnet3d_forward(spec, &detector.params, clip, &pyramids)?;
                    let loss = cross_entropy(fwd.logits, label);
                    let correct = predict_label(fwd.logits) == label;
                    let dlogits = cross_entropy_grad(fwd.logits, label);
                    let (grads, _) = backward3d(spec, &detector.params, &fwd, dlogits, false);
                    Ok((loss, correct, grads))
                })
                .collect()
        }
    };
    let n = per_sample.len();
    assert!(n > 0, "empty batch");
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let mut grads = Params::zeros(spec);
    for result in per_sample {
        let (loss, ok, g) = result?;
        total_loss += loss;
        if ok {
            correct += 1;
        }
        grads.add_assign(&g);
    }
    grads.scale(1.0 / n as f64);
    Ok((total_loss / n as f64, correct as f64 / n as f64, grads))
}

/// One line of the append-only training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<TrainLogEntry>,
    pub final_step: u64,
    /// Step and held-out accuracy of the best checkpoint, when a holdout
    /// was evaluated.
    pub best: Option<(u64, f64)>,
}

const LOG_EVERY: u64 = 100;

/// Run `total_steps` optimizer updates from the batch source.
///
/// Logs every 100 steps, checkpoints every `decay_every` steps and at the
/// end (when `out_dir` is given), and keeps the checkpoint with the best
/// held-out accuracy (when `holdout` is given; its mask options must match
/// the training stream's). A non-finite batch loss halts training before
/// the parameter update, so the last written checkpoint stays good.
pub fn train(
    detector: &mut Detector,
    source: &mut dyn BatchSource,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    holdout: Option<(&DatasetManifest, &SampleOptions)>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if config.mode != detector.spec.mode {
        return Err(TrainError::InvalidConfig(format!(
            "config mode {:?} but model mode {:?}",
            config.mode, detector.spec.mode
        )));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log_file = match out_dir {
        Some(dir) => Some(std::fs::File::create(dir.join("train_log.jsonl"))?),
        None => None,
    };
    let mut adam = Adam::new(detector);
    let mut log = Vec::new();
    let mut best: Option<(u64, f64)> = None;

    for step in 0..config.total_steps {
        let batch = source.next()?;
        let (loss, acc, grads) = batch_gradients(detector, &batch)?;
        if !loss.is_finite() {
            return Err(TrainError::Divergence { step });
        }
        let lr = lr_at(step, config);
        adam.step(&mut detector.params, &grads, lr);
        let done = step + 1;
        if done % LOG_EVERY == 0 || done == config.total_steps {
            let entry = TrainLogEntry {
                step: done,
                loss,
                lr,
                acc,
            };
            if let Some(file) = &mut log_file {
                let line = serde_json::to_string(&entry)
                    .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
                writeln!(file, "{line}")?;
                file.flush()?;
            }
            log.push(entry);
        }
        if done % config.decay_every == 0 || done == config.total_steps {
            if let Some(dir) = out_dir {
                let name = if done == config.total_steps {
                    "checkpoint_final.json".to_string()
                } else {
                    format!("checkpoint_step{done}.json")
                };
                save_checkpoint(&dir.join(name), detector, done)?;
            }
            if let Some((holdout, opts)) = holdout {
                let report = match detector.spec.mode {
                    Mode::Image => evaluate_images(
                        detector,
                        holdout,
                        Split::Train,
                        config.batch_size,
                        opts,
                    )?,
                    Mode::Sequence => evaluate_clips(detector, holdout, Split::Train, opts)?,
                };
                if best.is_none_or(|(_, acc)| report.accuracy > acc) {
                    best = Some((done, report.accuracy));
                    if let Some(dir) = out_dir {
                        save_checkpoint(&dir.join("checkpoint_best.json"), detector, done)?;
                    }
                }
            }
        }
    }
    Ok(TrainOutcome {
        log,
        final_step: config.total_steps,
        best,
    })
}

/// Full training harness over a manifest: carves a held-out slice off the
/// train split for best-checkpoint selection (test data never influences
/// selection), streams the rest, and runs [`train`].
pub fn train_on_manifest(
    detector: &mut Detector,
    manifest: &DatasetManifest,
    config: &TrainConfig,
    opts: &SampleOptions,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let (fit, holdout) = carve_holdout(manifest, config.holdout_fraction, config.seed);
    match detector.spec.mode {
        Mode::Image => {
            let mut stream =
                sample_images(&fit, Split::Train, config.batch_size, config.seed, opts)?;
            train(detector, &mut stream, config, out_dir, holdout.as_ref().map(|h| (h, opts)))
        }
        Mode::Sequence => {
            let mut stream = crate::data::sample_clips(
                &fit,
                Split::Train,
                detector.spec.sequence_length,
                config.batch_size,
                config.seed,
                opts,
            )?;
            train(detector, &mut stream, config, out_dir, holdout.as_ref().map(|h| (h, opts)))
        }
    }
}

/// Deterministically split the train sequences into a fitting set and a
/// held-out set of roughly the given fraction.
fn carve_holdout(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> (DatasetManifest, Option<DatasetManifest>) {
    use rand::seq::SliceRandom;
    use rand_chacha::rand_core::SeedableRng;
    let train_idx: Vec<usize> = manifest
        .sequences()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let k = ((fraction * train_idx.len() as f64).round() as usize).min(train_idx.len());
    if k == 0 || k == train_idx.len() {
        return (manifest.clone(), None);
    }
    let mut shuffled = train_idx.clone();
    shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x484F4C44)); // "HOLD"
    let held: std::collections::HashSet<usize> = shuffled[..k].iter().copied().collect();
    let fit_ids: Vec<usize> = (0..manifest.sequences().len())
        .filter(|i| !held.contains(i))
        .collect();
    let held_ids: Vec<usize> = shuffled[..k].to_vec();
    (manifest.subset(&fit_ids), Some(manifest.subset(&held_ids)))
}

/// Per-dataset accuracy with exact confusion counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split: String,
    pub mode: String,
    pub samples: usize,
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub accuracy: f64,
    #[serde(default)]
    pub config_fingerprint: String,
    #[serde(default)]
    pub checkpoint_id: String,
}

impl EvalReport {
    fn from_counts(dataset: String, split: Split, mode: Mode, counts: [usize; 4]) -> Self {
        let [tp, tn, fp, fn_] = counts;
        let total = tp + tn + fp + fn_;
        EvalReport {
            dataset,
            split: split.to_string(),
            mode: match mode {
                Mode::Image => "image".into(),
                Mode::Sequence => "sequence".into(),
            },
            samples: total,
            true_positive: tp,
            true_negative: tn,
            false_positive: fp,
            false_negative: fn_,
            accuracy: (tp + tn) as f64 / total as f64,
            config_fingerprint: String::new(),
            checkpoint_id: String::new(),
        }
    }
}

fn tally(counts: &mut [usize; 4], label: u8, predicted: u8) {
    match (label, predicted) {
        (1, 1) => counts[0] += 1,
        (0, 0) => counts[1] += 1,
        (0, 1) => counts[2] += 1,
        (1, 0) => counts[3] += 1,
        _ => unreachable!("labels are validated to 0/1"),
    }
}

/// Frame-level evaluation: one sequential pass over the split, argmax
/// decisions, exact counts. Deterministic for a given checkpoint and split.
pub fn evaluate_images(
    detector: &Detector,
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    opts: &SampleOptions,
) -> Result<EvalReport, TrainError> {
    if detector.spec.mode != Mode::Image {
        return Err(TrainError::ModeMismatch {
            model: detector.spec.mode,
            data: "image batches",
        });
    }
    let eval_opts = SampleOptions {
        shuffle: false,
        balanced: false,
        ..opts.clone()
    };
    let mut stream = sample_images(manifest, split, batch_size, 0, &eval_opts)?;
    let targets = detector.spec.pyramid_targets();
    let mut counts = [0usize; 4];
    for _ in 0..stream.batches_per_epoch() {
        let batch = stream.next_batch()?;
        for ((image, mask), &label) in batch.images.iter().zip(&batch.masks).zip(&batch.labels) {
            let pyramid = build_mask_pyramid(mask, &targets)?;
            let fwd = addnet2d_forward(&detector.spec, &detector.params, image, Some(&pyramid))?;
            tally(&mut counts, label, predict_label(fwd.logits));
        }
    }
    Ok(EvalReport::from_counts(
        manifest.root().display().to_string(),
        split,
        Mode::Image,
        counts,
    ))
}

/// Clip-level evaluation over deterministic disjoint windows.
pub fn evaluate_clips(
    detector: &Detector,
    manifest: &DatasetManifest,
    split: Split,
    opts: &SampleOptions,
) -> Result<EvalReport, TrainError> {
    if detector.spec.mode != Mode::Sequence {
        return Err(TrainError::ModeMismatch {
            model: detector.spec.mode,
            data: "clip batches",
        });
    }
    let eval_opts = SampleOptions {
        shuffle: false,
        balanced: false,
        ..opts.clone()
    };
    let mut stream = crate::data::sample_clips(
        manifest,
        split,
        detector.spec.sequence_length,
        1,
        0,
        &eval_opts,
    )?;
    let targets = detector.spec.pyramid_targets();
    let mut counts = [0usize; 4];
    for (clip, masks, label) in stream.eval_windows()? {
        let pyramids: Vec<MaskPyramid> = masks
            .iter()
            .map(|m| build_mask_pyramid(m, &targets))
            .collect::<Result<_, _>>()?;
        let fwd = addnet3d_forward(&detector.spec, &detector.params, &clip, &pyramids)?;
        tally(&mut counts, label, predict_label(fwd.logits));
    }
    Ok(EvalReport::from_counts(
        manifest.root().display().to_string(),
        split,
        Mode::Sequence,
        counts,
    ))
}

/// Stable FNV-1a fingerprint of any serializable config.
pub fn config_fingerprint<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_manifest;
    use crate::maskgen::AttentionMask;
    use crate::model::ModelSpec;
    use crate::synthface::write_sequence_corpus;
    use crate::tensor::Tensor;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn cross_entropy_on_confident_correct_logits_is_tiny() {
        assert!(cross_entropy([20.0, -20.0], 0) < 1e-8);
    }

    #[test]
    fn cross_entropy_on_uniform_logits_is_ln_two() {
        for label in [0u8, 1] {
            assert!((cross_entropy([0.0, 0.0], label) - std::f64::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_stays_finite_under_extreme_margins() {
        // log-sum-exp(1000, 0) = 1000 + ln(1 + e^-1000) = 1000 exactly at f64.
        let loss = cross_entropy([1000.0, 0.0], 1);
        assert!(loss.is_finite());
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let logits = [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)];
            let label = rng.gen_range(0..2) as u8;
            assert!(cross_entropy(logits, label) >= 0.0);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let logits = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
            let s = softmax(logits);
            assert!((s[0] + s[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn learning_rate_follows_the_staircase() {
        let config = TrainConfig::default();
        assert_eq!(lr_at(0, &config), 1.0e-4);
        assert!((lr_at(3000, &config) - 9.0e-5).abs() < 1e-18);
        assert!((lr_at(6000, &config) - 8.1e-5).abs() < 1e-18);
        // Piecewise constant and non-increasing; one decay per boundary.
        let mut changes = 0;
        let mut prev = lr_at(0, &config);
        for step in 1..10_000 {
            let lr = lr_at(step, &config);
            assert!(lr <= prev);
            if lr != prev {
                changes += 1;
                assert_eq!(step % config.decay_every, 0);
            }
            prev = lr;
        }
        assert_eq!(changes, (10_000 - 1) / config.decay_every);
    }

    #[test]
    fn argmax_ties_resolve_to_real() {
        assert_eq!(predict_label([0.3, 0.3]), 0);
        assert_eq!(predict_label([0.2, 0.5]), 1);
        assert_eq!(predict_label([0.5, 0.2]), 0);
    }

    #[test]
    fn decisions_are_invariant_to_constant_logit_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let logits = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let shift = rng.gen_range(-100.0..100.0);
            assert_eq!(
                predict_label(logits),
                predict_label([logits[0] + shift, logits[1] + shift])
            );
        }
    }

    fn ones_mask(w: usize, h: usize) -> AttentionMask {
        AttentionMask::from_values(w, h, vec![1.0; w * h])
    }

    fn toy_batch(n: usize, seed: u64) -> Batch {
        let spec = ModelSpec::miniature();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut masks = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let data: Vec<f64> = (0..2 * 8 * 8).map(|_| rng.gen_range(0.0..1.0)).collect();
            images.push(Tensor::from_vec(&[2, 8, 8], data));
            masks.push(ones_mask(spec.input_width, spec.input_height));
            labels.push((i % 2) as u8);
        }
        Batch::Images(crate::data::ImageBatch { images, masks, labels })
    }

    #[test]
    fn zero_steps_leave_parameters_bit_identical() {
        let mut det = crate::model::Detector::new(ModelSpec::miniature(), 4).unwrap();
        let before = det.params.clone();
        let config = TrainConfig {
            total_steps: 0,
            ..TrainConfig::default()
        };
        let mut source = FixedBatch(toy_batch(4, 5));
        let outcome = train(&mut det, &mut source, &config, None, None).unwrap();
        assert_eq!(det.params, before);
        assert!(outcome.log.is_empty());
    }

    #[test]
    fn nan_batch_is_reported_as_divergence() {
        let mut det = crate::model::Detector::new(ModelSpec::miniature(), 6).unwrap();
        let mut batch = toy_batch(2, 7);
        if let Batch::Images(b) = &mut batch {
            b.images[0].data_mut()[5] = f64::NAN;
        }
        let config = TrainConfig {
            total_steps: 10,
            ..TrainConfig::default()
        };
        let err = train(&mut det, &mut FixedBatch(batch), &config, None, None).unwrap_err();
        assert!(matches!(err, TrainError::Divergence { step: 0 }));
    }

    #[test]
    fn one_small_step_changes_loss_by_the_gradient_slope() {
        let mut det = crate::model::Detector::new(ModelSpec::miniature(), 8).unwrap();
        let batch = toy_batch(8, 9);
        let (loss0, _, grads) = batch_gradients(&det, &batch).unwrap();
        let before = det.params.clone();
        let mut adam = Adam::new(&det);
        let lr = 1e-6;
        adam.step(&mut det.params, &grads, lr);
        let (loss1, _, _) = batch_gradients(&det, &batch).unwrap();
        let mut predicted = 0.0;
        for (name, p_after) in det.params.iter() {
            let p_before = before.get(name);
            let g = grads.get(name);
            for i in 0..g.len() {
                predicted += g.data()[i] * (p_after.data()[i] - p_before.data()[i]);
            }
        }
        let actual = loss1 - loss0;
        assert!(actual < 0.0, "a gradient step must reduce the loss");
        assert!(
            (actual - predicted).abs() <= 0.05 * predicted.abs(),
            "first-order mismatch: actual {actual:.3e}, predicted {predicted:.3e}"
        );
    }

    #[test]
    fn fixed_batch_is_memorized_quickly() {
        let mut det = crate::model::Detector::new(ModelSpec::miniature(), 10).unwrap();
        let batch = toy_batch(8, 11);
        let config = TrainConfig {
            total_steps: 200,
            base_lr: 1e-2,
            ..TrainConfig::default()
        };
        train(&mut det, &mut FixedBatch(batch.clone()), &config, None, None).unwrap();
        let (_, acc, _) = batch_gradients(&det, &batch).unwrap();
        assert!(acc >= 0.9, "memorization accuracy {acc}");
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let det = crate::model::Detector::new(ModelSpec::addnet3d_default(), 1).unwrap();
        let err = batch_gradients(&det, &toy_batch(2, 12)).unwrap_err();
        assert!(matches!(err, TrainError::ModeMismatch { .. }));
    }

    #[test]
    fn accuracy_arithmetic_is_exact() {
        // predictions (1, 0, 1) against labels (1, 1, 1).
        let mut counts = [0usize; 4];
        tally(&mut counts, 1, 1);
        tally(&mut counts, 1, 0);
        tally(&mut counts, 1, 1);
        let report = EvalReport::from_counts("d".into(), Split::Test, Mode::Image, counts);
        assert_eq!(report.samples, 3);
        assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            report.true_positive
                + report.true_negative
                + report.false_positive
                + report.false_negative,
            report.samples
        );

        // All-correct: accuracy exactly 1, no false counts.
        let mut counts = [0usize; 4];
        for label in [0u8, 1, 0, 1] {
            tally(&mut counts, label, label);
        }
        let report = EvalReport::from_counts("d".into(), Split::Test, Mode::Image, counts);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.false_positive, 0);
        assert_eq!(report.false_negative, 0);
    }

    fn tiny_manifest(dir: &Path, count: usize, frames: usize) -> DatasetManifest {
        let mut seqs = write_sequence_corpus(dir, count, frames, (16, 16), 21).unwrap();
        for (i, seq) in seqs.iter_mut().enumerate() {
            if i % 4 == 3 {
                seq.split = Split::Test;
            }
        }
        let path = dir.join("manifest.jsonl");
        write_manifest(&path, &seqs).unwrap();
        crate::data::load_manifest(&path).unwrap()
    }

    fn tiny_spec() -> ModelSpec {
        let mut spec = ModelSpec::miniature();
        spec.input_width = 16;
        spec.input_height = 16;
        spec.input_channels = 3;
        spec
    }

    #[test]
    fn constant_logit_model_scores_the_label_zero_base_rate() {
        let dir = tempdir().unwrap();
        let manifest = tiny_manifest(dir.path(), 8, 2);
        let spec = tiny_spec();
        // All-zero parameters give identical logits for every sample; ties
        // resolve to label 0.
        let det = crate::model::Detector {
            spec: spec.clone(),
            params: crate::model::Params::zeros(&spec),
        };
        let report =
            evaluate_images(&det, &manifest, Split::Train, 4, &SampleOptions::default()).unwrap();
        let zeros = manifest
            .split_sequences(Split::Train)
            .filter(|s| s.label == 0)
            .map(|s| s.frames.len())
            .sum::<usize>();
        assert_eq!(report.true_negative, zeros);
        assert_eq!(report.true_positive, 0);
        assert!((report.accuracy - zeros as f64 / report.samples as f64).abs() < 1e-15);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let dir = tempdir().unwrap();
        let manifest = tiny_manifest(dir.path(), 6, 2);
        let det = crate::model::Detector::new(tiny_spec(), 31).unwrap();
        let a = evaluate_images(&det, &manifest, Split::Train, 4, &SampleOptions::default())
            .unwrap();
        let b = evaluate_images(&det, &manifest, Split::Train, 4, &SampleOptions::default())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_split_evaluation_is_rejected() {
        let dir = tempdir().unwrap();
        let seqs = write_sequence_corpus(dir.path(), 2, 1, (16, 16), 5).unwrap();
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&path, &seqs).unwrap();
        let manifest = crate::data::load_manifest(&path).unwrap();
        let det = crate::model::Detector::new(tiny_spec(), 1).unwrap();
        let err =
            evaluate_images(&det, &manifest, Split::Test, 4, &SampleOptions::default());
        assert!(matches!(err, Err(TrainError::Data(DataError::EmptySplit))));
    }

    #[test]
    fn harness_writes_log_and_checkpoints() {
        let dir = tempdir().unwrap();
        let manifest = tiny_manifest(dir.path(), 12, 2);
        let mut det = crate::model::Detector::new(tiny_spec(), 41).unwrap();
        let out = dir.path().join("run");
        let config = TrainConfig {
            total_steps: 200,
            decay_every: 100,
            base_lr: 1e-3,
            seed: 17,
            ..TrainConfig::default()
        };
        let opts = SampleOptions { shuffle: true, ..Default::default() };
        let outcome =
            train_on_manifest(&mut det, &manifest, &config, &opts, Some(&out)).unwrap();
        assert_eq!(outcome.final_step, 200);
        assert_eq!(outcome.log.len(), 2); // steps 100 and 200
        assert!(out.join("train_log.jsonl").is_file());
        assert!(out.join("checkpoint_step100.json").is_file());
        assert!(out.join("checkpoint_final.json").is_file());
        assert!(out.join("checkpoint_best.json").is_file());
        assert!(outcome.best.is_some());
        let logged = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
        assert_eq!(logged.lines().count(), 2);
        let first: TrainLogEntry = serde_json::from_str(logged.lines().next().unwrap()).unwrap();
        assert_eq!(first.step, 100);
        assert_eq!(first.lr, lr_at(99, &config));
    }

    #[test]
    fn same_seed_reproduces_the_training_log_bitwise() {
        let dir = tempdir().unwrap();
        let manifest = tiny_manifest(dir.path(), 8, 2);
        let config = TrainConfig {
            total_steps: 120,
            decay_every: 60,
            base_lr: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let opts = SampleOptions { shuffle: true, ..Default::default() };
        let run = || {
            let mut det = crate::model::Detector::new(tiny_spec(), 51).unwrap();
            let outcome =
                train_on_manifest(&mut det, &manifest, &config, &opts, None).unwrap();
            (outcome.log, det.params)
        };
        let (log_a, params_a) = run();
        let (log_b, params_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn fingerprint_is_stable_and_input_sensitive() {
        let a = TrainConfig::default();
        let mut b = TrainConfig::default();
        assert_eq!(config_fingerprint(&a), config_fingerprint(&b));
        b.base_lr = 2e-4;
        assert_ne!(config_fingerprint(&a), config_fingerprint(&b));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            TrainConfig { base_lr: 0.0, ..TrainConfig::default() },
            TrainConfig { decay_factor: 0.0, ..TrainConfig::default() },
            TrainConfig { decay_factor: 1.5, ..TrainConfig::default() },
            TrainConfig { decay_every: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(TrainConfig::default().validate().is_ok());
    }
}

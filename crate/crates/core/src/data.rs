//! Dataset ingestion: manifest schema, deterministic batch streams for
//! image- and clip-level training, and similarity-based train/test
//! splitting.
//!
//! A manifest is line-delimited JSON: a header record with the schema
//! version, then one record per face sequence. Paths are relative to the
//! manifest's directory. The on-disk layout convention is
//! `<root>/<sequence_id>/<frame_index>.png` with optional
//! `<frame_index>.landmarks.txt` sidecars, and a mask cache mirroring it
//! with a `.mask.png` suffix, but the loader honors whatever paths a
//! manifest lists.

use crate::geometry::{parse_landmarks_text, GeometryError, Landmark68};
use crate::image::{dequantize, quantize, Image, ImageError};
use crate::maskgen::{
    default_sigma, generate_attention_mask, AttentionMask, MaskError,
};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use thiserror::Error;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest schema error: {0}")]
    SchemaError(String),
    #[error("missing files:\n{}", .paths.join("\n"))]
    MissingFile { paths: Vec<String> },
    #[error("split has no usable samples")]
    EmptySplit,
    #[error("no sequence long enough for the requested clip length")]
    NoEligibleSequence,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One frame of a face sequence. Landmarks may be a sidecar path or
/// embedded coordinates; frames with neither are skipped by the samplers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameRecord {
    pub index: u64,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_xy: Option<Vec<f64>>,
}

/// A labeled face sequence; wholly real (0) or wholly fake (1).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FaceSequence {
    pub sequence_id: String,
    pub label: u8,
    pub split: Split,
    #[serde(default)]
    pub source_tag: String,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    schema_version: u32,
}

/// Validated dataset manifest plus the directory its paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    root: PathBuf,
    sequences: Vec<FaceSequence>,
}

impl DatasetManifest {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sequences(&self) -> &[FaceSequence] {
        &self.sequences
    }

    pub fn split_sequences(&self, split: Split) -> impl Iterator<Item = &FaceSequence> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    /// Copy containing only the sequences at the given indices.
    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
        }
    }

    /// Copy of the manifest with a new split assignment (parallel to
    /// `sequences()`).
    pub fn with_splits(&self, assignment: &[Split]) -> DatasetManifest {
        assert_eq!(assignment.len(), self.sequences.len());
        let mut out = self.clone();
        for (seq, &split) in out.sequences.iter_mut().zip(assignment) {
            seq.split = split;
        }
        out
    }
}

/// Parse and validate a manifest: schema version, labels, frame ordering,
/// split uniqueness, and existence of every referenced file (all missing
/// paths are reported together).
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let file = std::fs::File::open(path)
        .map_err(|e| DataError::SchemaError(format!("open {}: {e}", path.display())))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut lines = BufReader::new(file).lines().enumerate();

    let header_line = loop {
        match lines.next() {
            Some((n, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break (n, line);
                }
            }
            None => return Err(DataError::SchemaError("empty manifest".into())),
        }
    };
    let header: ManifestHeader = serde_json::from_str(&header_line.1)
        .map_err(|e| DataError::SchemaError(format!("line {}: {e}", header_line.0 + 1)))?;
    if header.schema_version != MANIFEST_SCHEMA {
        return Err(DataError::SchemaError(format!(
            "unsupported schema_version {}",
            header.schema_version
        )));
    }

    let mut sequences: Vec<FaceSequence> = Vec::new();
    let mut seen_ids: HashMap<String, Split> = HashMap::new();
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: FaceSequence = serde_json::from_str(&line)
            .map_err(|e| DataError::SchemaError(format!("line {}: {e}", n + 1)))?;
        if seq.label > 1 {
            return Err(DataError::SchemaError(format!(
                "line {}: label {} is not 0 or 1",
                n + 1,
                seq.label
            )));
        }
        if seq.frames.is_empty() {
            return Err(DataError::SchemaError(format!(
                "line {}: sequence {} has no frames",
                n + 1,
                seq.sequence_id
            )));
        }
        for pair in seq.frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(DataError::SchemaError(format!(
                    "line {}: frame indices must be strictly increasing in {}",
                    n + 1,
                    seq.sequence_id
                )));
            }
        }
        for frame in &seq.frames {
            if let Some(xy) = &frame.landmarks_xy {
                if xy.len() != 136 {
                    return Err(DataError::SchemaError(format!(
                        "line {}: landmarks_xy must hold 136 values, got {}",
                        n + 1,
                        xy.len()
                    )));
                }
            }
        }
        if seen_ids.insert(seq.sequence_id.clone(), seq.split).is_some() {
            return Err(DataError::SchemaError(format!(
                "line {}: sequence_id {} appears more than once",
                n + 1,
                seq.sequence_id
            )));
        }
        sequences.push(seq);
    }

    let mut missing = Vec::new();
    for seq in &sequences {
        for frame in &seq.frames {
            let img = root.join(&frame.image);
            if !img.is_file() {
                missing.push(img.display().to_string());
            }
            if let Some(lm) = &frame.landmarks {
                let lm = root.join(lm);
                if !lm.is_file() {
                    missing.push(lm.display().to_string());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(DataError::MissingFile { paths: missing });
    }
    Ok(DatasetManifest { root, sequences })
}

/// Write a manifest: header line then one JSON record per sequence.
pub fn write_manifest(path: &Path, sequences: &[FaceSequence]) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &ManifestHeader { schema_version: MANIFEST_SCHEMA })
        .map_err(|e| DataError::SchemaError(e.to_string()))?;
    out.write_all(b"\n")?;
    for seq in sequences {
        serde_json::to_writer(&mut out, seq).map_err(|e| DataError::SchemaError(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Knobs shared by the batch streams.
#[derive(Debug, Clone, Default)]
pub struct SampleOptions {
    /// Shuffle each epoch; off gives deterministic manifest order.
    pub shuffle: bool,
    /// Alternate labels so every full batch is half real, half fake.
    pub balanced: bool,
    /// Attention mask sigma; `None` uses the resolution-proportional default.
    pub sigma: Option<f64>,
    /// Mask cache root mirroring the dataset layout with `.mask.png` files.
    pub mask_cache: Option<PathBuf>,
}

#[derive(Clone)]
struct FrameData {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
    /// Quantized mask; the fresh and cached pipelines both pass through the
    /// same 8-bit representation so batches are bit-identical either way.
    mask: Vec<u8>,
}

#[derive(Debug, Clone, Copy)]
struct FrameRef {
    seq: usize,
    frame: usize,
    label: u8,
}

/// Shared frame-loading state for the samplers.
struct FrameLoader {
    root: PathBuf,
    sequences: Vec<FaceSequence>,
    sigma: Option<f64>,
    mask_cache: Option<PathBuf>,
    cache: HashMap<(usize, usize), Rc<FrameData>>,
    size: Option<(usize, usize, usize)>,
}

impl FrameLoader {
    fn new(manifest: &DatasetManifest, opts: &SampleOptions) -> Self {
        FrameLoader {
            root: manifest.root.clone(),
            sequences: manifest.sequences.clone(),
            sigma: opts.sigma,
            mask_cache: opts.mask_cache.clone(),
            cache: HashMap::new(),
            size: None,
        }
    }

    fn frame_landmarks(&self, fref: FrameRef) -> Result<Option<Landmark68>, DataError> {
        let frame = &self.sequences[fref.seq].frames[fref.frame];
        if let Some(xy) = &frame.landmarks_xy {
            let pts = xy.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            return Ok(Some(Landmark68::new(pts)?));
        }
        if let Some(lm_path) = &frame.landmarks {
            let text = std::fs::read_to_string(self.root.join(lm_path))?;
            return Ok(Some(parse_landmarks_text(&text)?));
        }
        Ok(None)
    }

    fn mask_cache_path(&self, fref: FrameRef) -> Option<PathBuf> {
        let seq = &self.sequences[fref.seq];
        let frame = &seq.frames[fref.frame];
        self.mask_cache
            .as_ref()
            .map(|dir| dir.join(&seq.sequence_id).join(format!("{}.mask.png", frame.index)))
    }

    /// A frame is usable when a mask can be produced for it: landmarks in
    /// the manifest/sidecar, or an already-cached mask file.
    fn eligible(&self, fref: FrameRef) -> bool {
        let frame = &self.sequences[fref.seq].frames[fref.frame];
        if frame.landmarks.is_some() || frame.landmarks_xy.is_some() {
            return true;
        }
        self.mask_cache_path(fref).is_some_and(|p| p.is_file())
    }

    fn load(&mut self, fref: FrameRef) -> Result<Rc<FrameData>, DataError> {
        if let Some(hit) = self.cache.get(&(fref.seq, fref.frame)) {
            return Ok(hit.clone());
        }
        let frame = &self.sequences[fref.seq].frames[fref.frame];
        let image = Image::load_png(&self.root.join(&frame.image))?;
        let (w, h, c) = (image.width(), image.height(), image.channels());
        match self.size {
            None => self.size = Some((w, h, c)),
            Some(expected) if expected != (w, h, c) => {
                return Err(DataError::SchemaError(format!(
                    "frame {} of {} is {w}x{h}x{c}, stream started with {}x{}x{}",
                    frame.index, self.sequences[fref.seq].sequence_id, expected.0, expected.1, expected.2
                )));
            }
            _ => {}
        }
        let cache_path = self.mask_cache_path(fref);
        let mask: Vec<u8> = match cache_path.as_ref().filter(|p| p.is_file()) {
            Some(path) => {
                let cached = Image::load_png(path)?;
                if cached.width() != w || cached.height() != h || cached.channels() != 1 {
                    return Err(DataError::SchemaError(format!(
                        "cached mask {} does not match its frame",
                        path.display()
                    )));
                }
                cached.data().iter().map(|&v| quantize(v)).collect()
            }
            None => {
                let landmarks = self.frame_landmarks(fref)?.ok_or_else(|| {
                    DataError::SchemaError(format!(
                        "frame {} of {} has no landmarks and no cached mask",
                        frame.index, self.sequences[fref.seq].sequence_id
                    ))
                })?;
                let sigma = self.sigma.unwrap_or_else(|| default_sigma((w, h)));
                let (mask, _warnings) = generate_attention_mask(&landmarks, (w, h), sigma)?;
                let bytes: Vec<u8> = mask.values().iter().map(|&v| quantize(v)).collect();
                if let Some(path) = &cache_path {
                    std::fs::create_dir_all(path.parent().expect("cache path has parent"))?;
                    let img = Image::from_u8(w, h, 1, &bytes);
                    img.save_png(path)?;
                }
                bytes
            }
        };
        let data = Rc::new(FrameData {
            width: w,
            height: h,
            channels: c,
            pixels: image.to_u8(),
            mask,
        });
        self.cache.insert((fref.seq, fref.frame), data.clone());
        Ok(data)
    }
}

fn frame_tensors(data: &FrameData) -> (Tensor, AttentionMask) {
    let img = Image::from_u8(data.width, data.height, data.channels, &data.pixels);
    let tensor = Tensor::from_vec(
        &[data.channels, data.height, data.width],
        img.data().to_vec(),
    );
    let mask = AttentionMask::from_values(
        data.width,
        data.height,
        data.mask.iter().map(|&b| dequantize(b)).collect(),
    );
    (tensor, mask)
}

/// One training batch of face images.
#[derive(Clone)]
pub struct ImageBatch {
    pub images: Vec<Tensor>,
    pub masks: Vec<AttentionMask>,
    pub labels: Vec<u8>,
}

/// Deterministic epoch-based sampler over all frames of a split.
///
/// Every frame appears exactly once per epoch; shuffled mode draws a fresh
/// seeded permutation each epoch, balanced mode alternates labels so full
/// batches split evenly.
pub struct ImageStream {
    loader: FrameLoader,
    frames: Vec<FrameRef>,
    batch_size: usize,
    shuffle: bool,
    balanced: bool,
    rng: ChaCha8Rng,
    epoch_order: Vec<FrameRef>,
    cursor: usize,
    epoch: u64,
    skipped_frames: usize,
}

pub fn sample_images(
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    rng_seed: u64,
    opts: &SampleOptions,
) -> Result<ImageStream, DataError> {
    assert!(batch_size > 0, "batch size must be positive");
    let loader = FrameLoader::new(manifest, opts);
    let mut frames = Vec::new();
    let mut skipped = 0usize;
    for (si, seq) in loader.sequences.iter().enumerate() {
        if seq.split != split {
            continue;
        }
        for fi in 0..seq.frames.len() {
            let fref = FrameRef {
                seq: si,
                frame: fi,
                label: seq.label,
            };
            if loader.eligible(fref) {
                frames.push(fref);
            } else {
                skipped += 1;
            }
        }
    }
    if frames.is_empty() {
        return Err(DataError::EmptySplit);
    }
    let mut stream = ImageStream {
        loader,
        frames,
        batch_size,
        shuffle: opts.shuffle,
        balanced: opts.balanced,
        rng: ChaCha8Rng::seed_from_u64(rng_seed),
        epoch_order: Vec::new(),
        cursor: 0,
        epoch: 0,
        skipped_frames: skipped,
    };
    stream.start_epoch();
    Ok(stream)
}

impl ImageStream {
    pub fn sample_count(&self) -> usize {
        self.frames.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.frames.len().div_ceil(self.batch_size)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Frames skipped because no mask source was available.
    pub fn skipped_frames(&self) -> usize {
        self.skipped_frames
    }

    fn start_epoch(&mut self) {
        let mut order = self.frames.clone();
        if self.shuffle {
            order.shuffle(&mut self.rng);
        }
        if self.balanced {
            let (zeros, ones): (Vec<&FrameRef>, Vec<&FrameRef>) =
                order.iter().partition(|f| f.label == 0);
            let mut merged = Vec::with_capacity(order.len());
            let (mut zi, mut oi) = (zeros.into_iter(), ones.into_iter());
            loop {
                match (zi.next(), oi.next()) {
                    (Some(a), Some(b)) => {
                        merged.push(*a);
                        merged.push(*b);
                    }
                    (Some(a), None) => {
                        merged.push(*a);
                        merged.extend(zi.by_ref().copied());
                        break;
                    }
                    (None, Some(b)) => {
                        merged.push(*b);
                        merged.extend(oi.by_ref().copied());
                        break;
                    }
                    (None, None) => break,
                }
            }
            order = merged;
        }
        self.epoch_order = order;
        self.cursor = 0;
    }

    /// Next batch; epochs roll over automatically.
    pub fn next_batch(&mut self) -> Result<ImageBatch, DataError> {
        if self.cursor >= self.epoch_order.len() {
            self.epoch += 1;
            self.start_epoch();
        }
        let end = (self.cursor + self.batch_size).min(self.epoch_order.len());
        let refs: Vec<FrameRef> = self.epoch_order[self.cursor..end].to_vec();
        self.cursor = end;
        let mut batch = ImageBatch {
            images: Vec::with_capacity(refs.len()),
            masks: Vec::with_capacity(refs.len()),
            labels: Vec::with_capacity(refs.len()),
        };
        for fref in refs {
            let data = self.loader.load(fref)?;
            let (tensor, mask) = frame_tensors(&data);
            batch.images.push(tensor);
            batch.masks.push(mask);
            batch.labels.push(fref.label);
        }
        Ok(batch)
    }
}

/// One evaluation window: frames, per-frame masks, label.
pub type EvalWindow = (Vec<Tensor>, Vec<AttentionMask>, u8);

/// One training batch of clips.
#[derive(Clone)]
pub struct ClipBatch {
    pub clips: Vec<Vec<Tensor>>,
    pub masks: Vec<Vec<AttentionMask>>,
    pub labels: Vec<u8>,
}

/// Random contiguous-window clip sampler.
pub struct ClipStream {
    loader: FrameLoader,
    eligible: Vec<(usize, u8)>,
    clip_len: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    skipped_sequences: usize,
}

pub fn sample_clips(
    manifest: &DatasetManifest,
    split: Split,
    clip_len: usize,
    batch_size: usize,
    rng_seed: u64,
    opts: &SampleOptions,
) -> Result<ClipStream, DataError> {
    assert!(clip_len > 0 && batch_size > 0);
    let loader = FrameLoader::new(manifest, opts);
    let mut eligible = Vec::new();
    let mut skipped = 0usize;
    for (si, seq) in loader.sequences.iter().enumerate() {
        if seq.split != split {
            continue;
        }
        let usable = seq.frames.len() >= clip_len
            && (0..seq.frames.len()).all(|fi| {
                loader.eligible(FrameRef {
                    seq: si,
                    frame: fi,
                    label: seq.label,
                })
            });
        if usable {
            eligible.push((si, seq.label));
        } else {
            skipped += 1;
        }
    }
    if eligible.is_empty() {
        return Err(DataError::NoEligibleSequence);
    }
    Ok(ClipStream {
        loader,
        eligible,
        clip_len,
        batch_size,
        rng: ChaCha8Rng::seed_from_u64(rng_seed),
        skipped_sequences: skipped,
    })
}

impl ClipStream {
    /// Sequences skipped for being shorter than the clip length (or
    /// missing mask sources).
    pub fn skipped_sequences(&self) -> usize {
        self.skipped_sequences
    }

    pub fn eligible_sequences(&self) -> usize {
        self.eligible.len()
    }

    /// Draw the next window start for a given sequence length; uniform over
    /// the valid starts.
    fn draw_start(&mut self, frames: usize) -> usize {
        let max_start = frames - self.clip_len;
        self.rng.gen_range(0..=max_start)
    }

    pub fn next_batch(&mut self) -> Result<ClipBatch, DataError> {
        let mut batch = ClipBatch {
            clips: Vec::with_capacity(self.batch_size),
            masks: Vec::with_capacity(self.batch_size),
            labels: Vec::with_capacity(self.batch_size),
        };
        for _ in 0..self.batch_size {
            let (si, label) = self.eligible[self.rng.gen_range(0..self.eligible.len())];
            let frames = self.loader.sequences[si].frames.len();
            let start = self.draw_start(frames);
            let (clip, masks) = self.load_window(si, label, start)?;
            batch.clips.push(clip);
            batch.masks.push(masks);
            batch.labels.push(label);
        }
        Ok(batch)
    }

    fn load_window(
        &mut self,
        si: usize,
        label: u8,
        start: usize,
    ) -> Result<(Vec<Tensor>, Vec<AttentionMask>), DataError> {
        let mut clip = Vec::with_capacity(self.clip_len);
        let mut masks = Vec::with_capacity(self.clip_len);
        for fi in start..start + self.clip_len {
            let data = self.loader.load(FrameRef {
                seq: si,
                frame: fi,
                label,
            })?;
            let (tensor, mask) = frame_tensors(&data);
            clip.push(tensor);
            masks.push(mask);
        }
        Ok((clip, masks))
    }

    /// Deterministic evaluation windows: per eligible sequence, disjoint
    /// clips starting at 0 and stepping by the clip length.
    pub fn eval_windows(&mut self) -> Result<Vec<EvalWindow>, DataError> {
        let mut out = Vec::new();
        for (si, label) in self.eligible.clone() {
            let frames = self.loader.sequences[si].frames.len();
            let mut start = 0;
            while start + self.clip_len <= frames {
                let (clip, masks) = self.load_window(si, label, start)?;
                out.push((clip, masks, label));
                start += self.clip_len;
            }
        }
        Ok(out)
    }
}

/// Greedy clustering split: near-duplicate sequences land in the same
/// cluster and clusters move to train or test atomically. Descriptors are
/// pluggable; pair this with [`default_descriptors`] for the stock
/// histogram distance.
pub fn split_assignment(
    descriptors: &[Vec<f64>],
    test_fraction: f64,
    rng_seed: u64,
    threshold: f64,
) -> Vec<Split> {
    assert!((0.0..=1.0).contains(&test_fraction));
    let n = descriptors.len();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, desc) in descriptors.iter().enumerate() {
        let found = clusters.iter_mut().find(|cluster| {
            let rep = &descriptors[cluster[0]];
            l1_distance(rep, desc) <= threshold
        });
        match found {
            Some(cluster) => cluster.push(i),
            None => clusters.push(vec![i]),
        }
    }
    let target = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut assignment = vec![Split::Train; n];
    let mut in_test = 0usize;
    for ci in order {
        if in_test >= target {
            break;
        }
        for &i in &clusters[ci] {
            assignment[i] = Split::Test;
        }
        in_test += clusters[ci].len();
    }
    assignment
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Stock sequence descriptor: mean over frames of a 32-bin grayscale
/// histogram, L1-normalized.
pub fn default_descriptors(manifest: &DatasetManifest) -> Result<Vec<Vec<f64>>, DataError> {
    const BINS: usize = 32;
    let mut out = Vec::with_capacity(manifest.sequences.len());
    for seq in &manifest.sequences {
        let mut hist = vec![0.0f64; BINS];
        let mut total = 0.0;
        for frame in &seq.frames {
            let img = Image::load_png(&manifest.root.join(&frame.image))?;
            let n = img.width() * img.height();
            for i in 0..n {
                let mut gray = 0.0;
                for c in 0..img.channels() {
                    gray += img.data()[c * n + i];
                }
                gray /= img.channels() as f64;
                let bin = ((gray * BINS as f64) as usize).min(BINS - 1);
                hist[bin] += 1.0;
                total += 1.0;
            }
        }
        for v in &mut hist {
            *v /= total;
        }
        out.push(hist);
    }
    Ok(out)
}

/// Assign train/test splits so visually similar sequences never straddle
/// the boundary; the test fraction is met to within one cluster.
pub fn split_by_similarity(
    manifest: &DatasetManifest,
    test_fraction: f64,
    rng_seed: u64,
) -> Result<Vec<Split>, DataError> {
    let descriptors = default_descriptors(manifest)?;
    Ok(split_assignment(&descriptors, test_fraction, rng_seed, 0.1))
}

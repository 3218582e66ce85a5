//! Attention-based detection networks.
//!
//! An ADD block is a stack of convolution stages whose outputs are
//! element-wise multiplied by average-pooled copies of the attention mask
//! at chosen injection points. The image-level detector (2D) follows the
//! block with a 1x1 convolution to two channels and global pooling; the
//! sequence-level detector (3D) applies one shared-weight ADD block per
//! frame, stacks the per-frame features along a temporal axis, and runs a
//! small 3D convolutional trunk before the same two-logit head.

pub mod nn;

mod forward;

pub use forward::{
    add_block_forward, addnet2d_forward, addnet3d_forward, backward2d, backward3d,
    AddBlockTrace, Forward2d, Forward3d, MaskGrads,
};

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad clip length: expected {expected}, got {got}")]
    BadClipLength { expected: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Image,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    GlobalAverage,
    GlobalMax,
}

/// Whether attention multiplies the stage output after the nonlinearity or
/// the pre-activation linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectSite {
    PostActivation,
    PreActivation,
}

/// One convolution stage: 3x3 (optionally depthwise separable), padding 1,
/// followed by ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub out_channels: usize,
    pub stride: usize,
    pub separable: bool,
}

/// One 3D trunk stage: 3x3x3 convolution, padding 1, spatial stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage3dSpec {
    pub out_channels: usize,
    pub temporal_stride: usize,
}

/// Declarative description of the detector: stage stack, attention
/// injection points, head and mode. The two-logit output (real = 0,
/// fake = 1) is fixed by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_width: usize,
    pub input_height: usize,
    pub input_channels: usize,
    pub stages: Vec<StageSpec>,
    /// Stage indices whose outputs are multiplied by a pyramid level.
    pub injection_points: Vec<usize>,
    pub inject_site: InjectSite,
    pub head_pool: PoolKind,
    pub mode: Mode,
    /// Frames per clip; meaningful in sequence mode only.
    pub sequence_length: usize,
    /// 3D trunk after the per-frame ADD blocks; sequence mode only.
    pub trunk3d: Vec<Stage3dSpec>,
}

pub const NUM_CLASSES: usize = 2;

impl ModelSpec {
    /// Image-level detector at the standard 224x224x3 input size, slimmed
    /// widths so it runs on a CPU.
    pub fn addnet2d_default() -> Self {
        ModelSpec {
            input_width: 224,
            input_height: 224,
            input_channels: 3,
            stages: vec![
                StageSpec { out_channels: 16, stride: 2, separable: false },
                StageSpec { out_channels: 24, stride: 2, separable: true },
                StageSpec { out_channels: 32, stride: 2, separable: true },
                StageSpec { out_channels: 48, stride: 2, separable: true },
                StageSpec { out_channels: 64, stride: 2, separable: true },
            ],
            injection_points: vec![0, 1, 2, 3, 4],
            inject_site: InjectSite::PostActivation,
            head_pool: PoolKind::GlobalAverage,
            mode: Mode::Image,
            sequence_length: 1,
            trunk3d: Vec::new(),
        }
    }

    /// Sequence-level detector at the standard clip shape (50 frames of
    /// 112x112x3), shared ADD block per frame plus a two-stage 3D trunk.
    pub fn addnet3d_default() -> Self {
        ModelSpec {
            input_width: 112,
            input_height: 112,
            input_channels: 3,
            stages: vec![
                StageSpec { out_channels: 16, stride: 2, separable: false },
                StageSpec { out_channels: 24, stride: 2, separable: true },
                StageSpec { out_channels: 32, stride: 2, separable: true },
                StageSpec { out_channels: 48, stride: 2, separable: true },
            ],
            injection_points: vec![0, 1, 2, 3],
            inject_site: InjectSite::PostActivation,
            head_pool: PoolKind::GlobalAverage,
            mode: Mode::Sequence,
            sequence_length: 50,
            trunk3d: vec![
                Stage3dSpec { out_channels: 48, temporal_stride: 2 },
                Stage3dSpec { out_channels: 64, temporal_stride: 2 },
            ],
        }
    }

    /// Desk-scale image detector for training experiments (64x64 input).
    pub fn addnet2d_desk() -> Self {
        ModelSpec {
            input_width: 64,
            input_height: 64,
            input_channels: 3,
            stages: vec![
                StageSpec { out_channels: 16, stride: 2, separable: false },
                StageSpec { out_channels: 24, stride: 2, separable: true },
                StageSpec { out_channels: 32, stride: 2, separable: true },
                StageSpec { out_channels: 48, stride: 2, separable: true },
            ],
            injection_points: vec![0, 1, 2, 3],
            inject_site: InjectSite::PostActivation,
            head_pool: PoolKind::GlobalAverage,
            mode: Mode::Image,
            sequence_length: 1,
            trunk3d: Vec::new(),
        }
    }

    /// Two-stage miniature block on an 8x8 input, for gradient checks.
    pub fn miniature() -> Self {
        ModelSpec {
            input_width: 8,
            input_height: 8,
            input_channels: 2,
            stages: vec![
                StageSpec { out_channels: 3, stride: 2, separable: false },
                StageSpec { out_channels: 4, stride: 2, separable: true },
            ],
            injection_points: vec![0, 1],
            inject_site: InjectSite::PostActivation,
            head_pool: PoolKind::GlobalAverage,
            mode: Mode::Image,
            sequence_length: 1,
            trunk3d: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stages.is_empty() {
            return Err(ModelError::InvalidSpec("no stages".into()));
        }
        if self.input_width == 0 || self.input_height == 0 || self.input_channels == 0 {
            return Err(ModelError::InvalidSpec("empty input".into()));
        }
        let (mut w, mut h) = (self.input_width, self.input_height);
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.stride == 0 || stage.out_channels == 0 {
                return Err(ModelError::InvalidSpec(format!("stage {i} has a zero field")));
            }
            if w % stage.stride != 0 || h % stage.stride != 0 {
                return Err(ModelError::InvalidSpec(format!(
                    "stage {i} stride {} does not divide {w}x{h}",
                    stage.stride
                )));
            }
            w /= stage.stride;
            h /= stage.stride;
        }
        let resolutions = self.stage_resolutions();
        let mut prev = (usize::MAX, usize::MAX);
        for &i in &self.injection_points {
            if i >= self.stages.len() {
                return Err(ModelError::InvalidSpec(format!(
                    "injection point {i} out of range"
                )));
            }
            let r = resolutions[i];
            if self.input_width % r.0 != 0 || self.input_height % r.1 != 0 {
                return Err(ModelError::InvalidSpec(format!(
                    "injection at stage {i}: {}x{} does not divide the input",
                    r.0, r.1
                )));
            }
            if r.0 > prev.0 || r.1 > prev.1 {
                return Err(ModelError::InvalidSpec(
                    "injection points must be in order of decreasing resolution".into(),
                ));
            }
            prev = r;
        }
        match self.mode {
            Mode::Image => {}
            Mode::Sequence => {
                if self.sequence_length == 0 {
                    return Err(ModelError::InvalidSpec("sequence_length must be >= 1".into()));
                }
                if self.trunk3d.is_empty() {
                    return Err(ModelError::InvalidSpec("sequence mode needs a 3D trunk".into()));
                }
                for (j, t) in self.trunk3d.iter().enumerate() {
                    if t.out_channels == 0 || t.temporal_stride == 0 {
                        return Err(ModelError::InvalidSpec(format!(
                            "trunk3d stage {j} has a zero field"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Output resolution of each stage, in order.
    pub fn stage_resolutions(&self) -> Vec<(usize, usize)> {
        let (mut w, mut h) = (self.input_width, self.input_height);
        self.stages
            .iter()
            .map(|s| {
                w /= s.stride;
                h /= s.stride;
                (w, h)
            })
            .collect()
    }

    /// Feature-map resolution at each injection point, in order.
    pub fn injection_resolutions(&self) -> Vec<(usize, usize)> {
        let res = self.stage_resolutions();
        self.injection_points.iter().map(|&i| res[i]).collect()
    }

    /// Pyramid pooling targets: the injection resolutions, deduplicated,
    /// excluding the input resolution (that level is the base mask itself).
    pub fn pyramid_targets(&self) -> Vec<(usize, usize)> {
        let mut targets = Vec::new();
        for r in self.injection_resolutions() {
            if r == (self.input_width, self.input_height) || targets.last() == Some(&r) {
                continue;
            }
            targets.push(r);
        }
        targets
    }

    /// Stable parameter names and shapes in forward order. Checkpoints key
    /// arrays by these names, so the naming is part of the contract.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        let mut in_c = self.input_channels;
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.separable {
                shapes.push((format!("stage{i}.depthwise.weight"), vec![in_c, 3, 3]));
                shapes.push((
                    format!("stage{i}.pointwise.weight"),
                    vec![stage.out_channels, in_c, 1, 1],
                ));
                shapes.push((format!("stage{i}.pointwise.bias"), vec![stage.out_channels]));
            } else {
                shapes.push((
                    format!("stage{i}.conv.weight"),
                    vec![stage.out_channels, in_c, 3, 3],
                ));
                shapes.push((format!("stage{i}.conv.bias"), vec![stage.out_channels]));
            }
            in_c = stage.out_channels;
        }
        match self.mode {
            Mode::Image => {
                shapes.push(("head.weight".into(), vec![NUM_CLASSES, in_c, 1, 1]));
                shapes.push(("head.bias".into(), vec![NUM_CLASSES]));
            }
            Mode::Sequence => {
                for (j, t) in self.trunk3d.iter().enumerate() {
                    shapes.push((
                        format!("trunk3d.{j}.weight"),
                        vec![t.out_channels, in_c, 3, 3, 3],
                    ));
                    shapes.push((format!("trunk3d.{j}.bias"), vec![t.out_channels]));
                    in_c = t.out_channels;
                }
                shapes.push(("head.weight".into(), vec![NUM_CLASSES, in_c, 1, 1, 1]));
                shapes.push(("head.bias".into(), vec![NUM_CLASSES]));
            }
        }
        shapes
    }

    /// Number of scalars in the full parameter set; a pure function of the
    /// spec and, in sequence mode, independent of the clip length.
    pub fn param_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Named parameter (or gradient) arrays with stable iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let map = spec
            .parameter_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Params { map }
    }

    /// He-normal weights, zero biases, deterministic in the seed.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = BTreeMap::new();
        for (name, shape) in spec.parameter_shapes() {
            let n: usize = shape.iter().product();
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
                let std = (2.0 / fan_in as f64).sqrt();
                Tensor::from_vec(&shape, (0..n).map(|_| std * gaussian(&mut rng)).collect())
            };
            map.insert(name, tensor);
        }
        Params { map }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) {
        self.map.insert(name, tensor);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// `self += other` over every named tensor.
    pub fn add_assign(&mut self, other: &Params) {
        for (name, tensor) in &mut self.map {
            tensor.add_assign(other.get(name));
        }
    }

    pub fn scale(&mut self, s: f64) {
        for tensor in self.map.values_mut() {
            tensor.scale(s);
        }
    }

    /// Zero every bias array (used by tests that need a bias-free network).
    pub fn zero_biases(&mut self) {
        for (name, tensor) in &mut self.map {
            if name.ends_with(".bias") {
                *tensor = Tensor::zeros(tensor.shape());
            }
        }
    }
}

/// Standard normal via Box-Muller, deterministic in the RNG stream.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A detection network: declarative spec plus its full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub spec: ModelSpec,
    pub params: Params,
}

impl Detector {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let params = Params::init(&spec, seed);
        Ok(Detector { spec, params })
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    spec: ModelSpec,
    step: u64,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

const CHECKPOINT_SCHEMA: u32 = 1;

/// Write spec, parameters (keyed by stable layer names) and the training
/// step counter as one JSON archive. f64 values round-trip exactly.
pub fn save_checkpoint(path: &Path, detector: &Detector, step: u64) -> Result<(), ModelError> {
    let file = CheckpointFile {
        schema_version: CHECKPOINT_SCHEMA,
        spec: detector.spec.clone(),
        step,
        params: detector
            .params
            .iter()
            .map(|(name, tensor)| ParamEntry {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                data: tensor.data().to_vec(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| ModelError::Checkpoint(format!("serialize: {e}")))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| ModelError::Checkpoint(format!("write {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<(Detector, u64), ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Checkpoint(format!("read {}: {e}", path.display())))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if file.schema_version != CHECKPOINT_SCHEMA {
        return Err(ModelError::Checkpoint(format!(
            "unsupported schema version {}",
            file.schema_version
        )));
    }
    file.spec.validate()?;
    let expected = file.spec.parameter_shapes();
    if expected.len() != file.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameter arrays, found {}",
            expected.len(),
            file.params.len()
        )));
    }
    let mut params = Params::zeros(&file.spec);
    for entry in file.params {
        let Some((_, shape)) = expected.iter().find(|(n, _)| *n == entry.name) else {
            return Err(ModelError::Checkpoint(format!(
                "unknown parameter {}",
                entry.name
            )));
        };
        if *shape != entry.shape {
            return Err(ModelError::Checkpoint(format!(
                "parameter {} has shape {:?}, expected {:?}",
                entry.name, entry.shape, shape
            )));
        }
        params.insert(entry.name, Tensor::from_vec(&entry.shape, entry.data));
    }
    Ok((
        Detector {
            spec: file.spec,
            params,
        },
        file.step,
    ))
}

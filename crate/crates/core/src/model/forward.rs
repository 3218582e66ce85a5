//! Forward and backward passes for the 2D and 3D detectors.
//!
//! Forward passes return trace structs holding every intermediate the
//! backward pass needs; gradients flow to the parameters and, on request,
//! to the injected mask values themselves.

use super::nn::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, depthwise2d_backward,
    depthwise2d_forward, mask_multiply, mask_multiply_backward, relu_backward, relu_forward,
};
use super::{InjectSite, Mode, ModelError, ModelSpec, Params, PoolKind, NUM_CLASSES};
use crate::maskgen::MaskPyramid;
use crate::tensor::Tensor;

/// Per-injection-point mask gradients, aligned with
/// `ModelSpec::injection_points`; `None` where not requested or not
/// injected.
pub type MaskGrads = Vec<Option<Vec<f64>>>;

/// Cached intermediates of one stage.
#[derive(Debug, Clone)]
pub struct StageCache {
    input: Tensor,
    /// Depthwise output, separable stages only.
    dw_out: Option<Tensor>,
    /// Pre-activation linear output.
    lin_out: Tensor,
    /// Post-activation features (post-inject site) or masked pre-activation
    /// (pre-inject site).
    mid: Tensor,
    /// Pyramid level applied at this stage, if any.
    mask: Option<Vec<f64>>,
    output: Tensor,
}

/// Trace of the stage stack (the ADD block).
#[derive(Debug, Clone)]
pub struct AddBlockTrace {
    stages: Vec<StageCache>,
}

impl AddBlockTrace {
    /// Final feature map.
    pub fn features(&self) -> &Tensor {
        &self.stages.last().expect("at least one stage").output
    }

    pub fn stage_output(&self, i: usize) -> &Tensor {
        &self.stages[i].output
    }

    /// Linear output of stage `i` before the nonlinearity.
    pub fn stage_preactivation(&self, i: usize) -> &Tensor {
        &self.stages[i].lin_out
    }
}

fn check_image_shape(spec: &ModelSpec, image: &Tensor) -> Result<(), ModelError> {
    let want = [spec.input_channels, spec.input_height, spec.input_width];
    if image.shape() != want {
        return Err(ModelError::ShapeMismatch(format!(
            "input {:?}, spec wants {:?}",
            image.shape(),
            want
        )));
    }
    Ok(())
}

/// Run the stage stack. With a pyramid, every injection point multiplies
/// the stage output element-wise by the matching pyramid level (broadcast
/// over channels); with `None` the injections are skipped entirely, which
/// is the attention-free backbone.
pub fn add_block_forward(
    spec: &ModelSpec,
    params: &Params,
    image: &Tensor,
    pyramid: Option<&MaskPyramid>,
) -> Result<AddBlockTrace, ModelError> {
    check_image_shape(spec, image)?;
    let mut stages = Vec::with_capacity(spec.stages.len());
    let mut x = image.clone();
    for (i, stage) in spec.stages.iter().enumerate() {
        let (dw_out, lin_out) = if stage.separable {
            let dw = depthwise2d_forward(&x, params.get(&format!("stage{i}.depthwise.weight")), 1, stage.stride);
            let z = conv2d_forward(
                &dw,
                params.get(&format!("stage{i}.pointwise.weight")),
                Some(params.get(&format!("stage{i}.pointwise.bias"))),
                0,
                1,
            );
            (Some(dw), z)
        } else {
            let z = conv2d_forward(
                &x,
                params.get(&format!("stage{i}.conv.weight")),
                Some(params.get(&format!("stage{i}.conv.bias"))),
                1,
                stage.stride,
            );
            (None, z)
        };
        let mask = match (pyramid, spec.injection_points.contains(&i)) {
            (Some(pyr), true) => {
                let (h, w) = (lin_out.shape()[1], lin_out.shape()[2]);
                let level = pyr.level_for(w, h).ok_or_else(|| {
                    ModelError::ShapeMismatch(format!(
                        "pyramid has no level at {w}x{h} for injection at stage {i}"
                    ))
                })?;
                Some(level.values().to_vec())
            }
            _ => None,
        };
        let (mid, output) = match spec.inject_site {
            InjectSite::PostActivation => {
                let act = relu_forward(&lin_out);
                let out = match &mask {
                    Some(m) => mask_multiply(&act, m),
                    None => act.clone(),
                };
                (act, out)
            }
            InjectSite::PreActivation => {
                let masked = match &mask {
                    Some(m) => mask_multiply(&lin_out, m),
                    None => lin_out.clone(),
                };
                let out = relu_forward(&masked);
                (masked, out)
            }
        };
        let next = output.clone();
        stages.push(StageCache {
            input: x,
            dw_out,
            lin_out,
            mid,
            mask,
            output,
        });
        x = next;
    }
    Ok(AddBlockTrace { stages })
}

/// Backward through the stage stack; accumulates parameter gradients into
/// `grads` and returns the gradient w.r.t. the block input plus mask
/// gradients per injection point.
fn add_block_backward(
    spec: &ModelSpec,
    params: &Params,
    trace: &AddBlockTrace,
    dfeatures: Tensor,
    grads: &mut Params,
    want_mask_grads: bool,
) -> (Tensor, MaskGrads) {
    let mut mask_grads: MaskGrads = vec![None; spec.injection_points.len()];
    let mut dy = dfeatures;
    for i in (0..spec.stages.len()).rev() {
        let cache = &trace.stages[i];
        let inj_pos = spec.injection_points.iter().position(|&p| p == i);
        let dz = match spec.inject_site {
            InjectSite::PostActivation => {
                let da = match &cache.mask {
                    Some(m) => {
                        let (da, dm) = mask_multiply_backward(&cache.mid, m, &dy);
                        if want_mask_grads {
                            mask_grads[inj_pos.expect("mask implies injection point")] = Some(dm);
                        }
                        da
                    }
                    None => dy,
                };
                relu_backward(&da, &cache.lin_out)
            }
            InjectSite::PreActivation => {
                let dmid = relu_backward(&dy, &cache.mid);
                match &cache.mask {
                    Some(m) => {
                        let (dz, dm) = mask_multiply_backward(&cache.lin_out, m, &dmid);
                        if want_mask_grads {
                            mask_grads[inj_pos.expect("mask implies injection point")] = Some(dm);
                        }
                        dz
                    }
                    None => dmid,
                }
            }
        };
        let stage = &spec.stages[i];
        dy = if stage.separable {
            let dw_out = cache.dw_out.as_ref().expect("separable stage cache");
            let (du, dwp, dbp) = conv2d_backward(
                dw_out,
                params.get(&format!("stage{i}.pointwise.weight")),
                &dz,
                0,
                1,
                true,
            );
            grads
                .get_mut(&format!("stage{i}.pointwise.weight"))
                .add_assign(&dwp);
            grads
                .get_mut(&format!("stage{i}.pointwise.bias"))
                .add_assign(&dbp.expect("pointwise bias"));
            let (dx, dwd) = depthwise2d_backward(
                &cache.input,
                params.get(&format!("stage{i}.depthwise.weight")),
                &du,
                1,
                stage.stride,
            );
            grads
                .get_mut(&format!("stage{i}.depthwise.weight"))
                .add_assign(&dwd);
            dx
        } else {
            let (dx, dw, db) = conv2d_backward(
                &cache.input,
                params.get(&format!("stage{i}.conv.weight")),
                &dz,
                1,
                stage.stride,
                true,
            );
            grads
                .get_mut(&format!("stage{i}.conv.weight"))
                .add_assign(&dw);
            grads
                .get_mut(&format!("stage{i}.conv.bias"))
                .add_assign(&db.expect("conv bias"));
            dx
        };
    }
    (dy, mask_grads)
}

fn pool_forward(map: &Tensor, pool: PoolKind) -> ([f64; NUM_CLASSES], Option<[usize; NUM_CLASSES]>) {
    let per = map.len() / NUM_CLASSES;
    let mut logits = [0.0; NUM_CLASSES];
    match pool {
        PoolKind::GlobalAverage => {
            for k in 0..NUM_CLASSES {
                logits[k] =
                    map.data()[k * per..(k + 1) * per].iter().sum::<f64>() / per as f64;
            }
            (logits, None)
        }
        PoolKind::GlobalMax => {
            let mut idx = [0usize; NUM_CLASSES];
            for k in 0..NUM_CLASSES {
                let plane = &map.data()[k * per..(k + 1) * per];
                let (best, v) = plane
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
                        if x > bv {
                            (i, x)
                        } else {
                            (bi, bv)
                        }
                    });
                logits[k] = v;
                idx[k] = best;
            }
            (logits, Some(idx))
        }
    }
}

fn pool_backward(
    shape: &[usize],
    pool: PoolKind,
    max_idx: Option<[usize; NUM_CLASSES]>,
    dlogits: [f64; NUM_CLASSES],
) -> Tensor {
    let mut dmap = Tensor::zeros(shape);
    let per = dmap.len() / NUM_CLASSES;
    match pool {
        PoolKind::GlobalAverage => {
            for k in 0..NUM_CLASSES {
                let g = dlogits[k] / per as f64;
                for v in &mut dmap.data_mut()[k * per..(k + 1) * per] {
                    *v = g;
                }
            }
        }
        PoolKind::GlobalMax => {
            let idx = max_idx.expect("max pooling cached indices");
            for k in 0..NUM_CLASSES {
                dmap.data_mut()[k * per + idx[k]] = dlogits[k];
            }
        }
    }
    dmap
}

/// Full image-level forward: ADD block, 1x1 convolution to two channels,
/// global pooling.
#[derive(Debug, Clone)]
pub struct Forward2d {
    pub block: AddBlockTrace,
    head_map: Tensor,
    max_idx: Option<[usize; NUM_CLASSES]>,
    pub logits: [f64; NUM_CLASSES],
}

pub fn addnet2d_forward(
    spec: &ModelSpec,
    params: &Params,
    image: &Tensor,
    pyramid: Option<&MaskPyramid>,
) -> Result<Forward2d, ModelError> {
    if spec.mode != Mode::Image {
        return Err(ModelError::InvalidSpec("addnet2d needs an image-mode spec".into()));
    }
    let block = add_block_forward(spec, params, image, pyramid)?;
    let head_map = conv2d_forward(
        block.features(),
        params.get("head.weight"),
        Some(params.get("head.bias")),
        0,
        1,
    );
    let (logits, max_idx) = pool_forward(&head_map, spec.head_pool);
    Ok(Forward2d {
        block,
        head_map,
        max_idx,
        logits,
    })
}

/// Gradients of a scalar loss w.r.t. parameters (and mask levels when
/// requested), given `dL/dlogits`.
pub fn backward2d(
    spec: &ModelSpec,
    params: &Params,
    fwd: &Forward2d,
    dlogits: [f64; NUM_CLASSES],
    want_mask_grads: bool,
) -> (Params, MaskGrads) {
    let mut grads = Params::zeros(spec);
    let dmap = pool_backward(fwd.head_map.shape(), spec.head_pool, fwd.max_idx, dlogits);
    let (dfeat, dhw, dhb) = conv2d_backward(
        fwd.block.features(),
        params.get("head.weight"),
        &dmap,
        0,
        1,
        true,
    );
    grads.get_mut("head.weight").add_assign(&dhw);
    grads.get_mut("head.bias").add_assign(&dhb.expect("head bias"));
    let (_, mask_grads) =
        add_block_backward(spec, params, &fwd.block, dfeat, &mut grads, want_mask_grads);
    (grads, mask_grads)
}

#[derive(Debug, Clone)]
struct Trunk3dCache {
    input: Tensor,
    lin_out: Tensor,
}

/// Full sequence-level forward: shared ADD block per frame, temporal stack,
/// 3D trunk, two-logit head.
#[derive(Debug, Clone)]
pub struct Forward3d {
    pub frames: Vec<AddBlockTrace>,
    volume: Tensor,
    trunk: Vec<Trunk3dCache>,
    head_map: Tensor,
    max_idx: Option<[usize; NUM_CLASSES]>,
    pub logits: [f64; NUM_CLASSES],
}

impl Forward3d {
    /// Per-frame ADD block output (weight sharing is observable here).
    pub fn frame_features(&self, t: usize) -> &Tensor {
        self.frames[t].features()
    }

    /// Linear output of 3D trunk stage `j` before its nonlinearity.
    pub fn trunk_preactivation(&self, j: usize) -> &Tensor {
        &self.trunk[j].lin_out
    }
}

pub fn addnet3d_forward(
    spec: &ModelSpec,
    params: &Params,
    clip: &[Tensor],
    pyramids: &[MaskPyramid],
) -> Result<Forward3d, ModelError> {
    if spec.mode != Mode::Sequence {
        return Err(ModelError::InvalidSpec("addnet3d needs a sequence-mode spec".into()));
    }
    if clip.len() != spec.sequence_length {
        return Err(ModelError::BadClipLength {
            expected: spec.sequence_length,
            got: clip.len(),
        });
    }
    if pyramids.len() != clip.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} frames but {} mask pyramids",
            clip.len(),
            pyramids.len()
        )));
    }
    let frames: Vec<AddBlockTrace> = clip
        .iter()
        .zip(pyramids)
        .map(|(frame, pyr)| add_block_forward(spec, params, frame, Some(pyr)))
        .collect::<Result<_, _>>()?;

    // Stack per-frame features [F, h, w] into a volume [F, L, h, w].
    let feat_shape = frames[0].features().shape().to_vec();
    let (f, h, w) = (feat_shape[0], feat_shape[1], feat_shape[2]);
    let l = frames.len();
    let mut volume = Tensor::zeros(&[f, l, h, w]);
    for (t, frame) in frames.iter().enumerate() {
        let src = frame.features().data();
        let dst = volume.data_mut();
        for c in 0..f {
            let src_base = c * h * w;
            let dst_base = (c * l + t) * h * w;
            dst[dst_base..dst_base + h * w].copy_from_slice(&src[src_base..src_base + h * w]);
        }
    }

    let mut trunk = Vec::with_capacity(spec.trunk3d.len());
    let mut x = volume.clone();
    for (j, t3) in spec.trunk3d.iter().enumerate() {
        let z = conv3d_forward(
            &x,
            params.get(&format!("trunk3d.{j}.weight")),
            Some(params.get(&format!("trunk3d.{j}.bias"))),
            (t3.temporal_stride, 1, 1),
            1,
        );
        let out = relu_forward(&z);
        trunk.push(Trunk3dCache {
            input: x,
            lin_out: z,
        });
        x = out;
    }
    let head_map = conv3d_forward(
        &x,
        params.get("head.weight"),
        Some(params.get("head.bias")),
        (1, 1, 1),
        0,
    );
    let (logits, max_idx) = pool_forward(&head_map, spec.head_pool);
    // The last trunk activation is needed by the backward pass.
    trunk.push(Trunk3dCache {
        input: x,
        lin_out: Tensor::zeros(&[0]),
    });
    Ok(Forward3d {
        frames,
        volume,
        trunk,
        head_map,
        max_idx,
        logits,
    })
}

/// Gradients for the sequence-level network. ADD block gradients accumulate
/// across frames (shared weights); mask gradients come back per frame.
pub fn backward3d(
    spec: &ModelSpec,
    params: &Params,
    fwd: &Forward3d,
    dlogits: [f64; NUM_CLASSES],
    want_mask_grads: bool,
) -> (Params, Vec<MaskGrads>) {
    let mut grads = Params::zeros(spec);
    let dmap = pool_backward(fwd.head_map.shape(), spec.head_pool, fwd.max_idx, dlogits);
    let last_act = &fwd.trunk.last().expect("trunk cache").input;
    let (mut dx, dhw, dhb) = conv3d_backward(last_act, params.get("head.weight"), &dmap, (1, 1, 1), 0);
    grads.get_mut("head.weight").add_assign(&dhw);
    grads.get_mut("head.bias").add_assign(&dhb);
    for j in (0..spec.trunk3d.len()).rev() {
        let cache = &fwd.trunk[j];
        let dz = relu_backward(&dx, &cache.lin_out);
        let (dprev, dw, db) = conv3d_backward(
            &cache.input,
            params.get(&format!("trunk3d.{j}.weight")),
            &dz,
            (spec.trunk3d[j].temporal_stride, 1, 1),
            1,
        );
        grads
            .get_mut(&format!("trunk3d.{j}.weight"))
            .add_assign(&dw);
        grads.get_mut(&format!("trunk3d.{j}.bias")).add_assign(&db);
        dx = dprev;
    }
    // Unstack the volume gradient into per-frame feature gradients.
    let shape = fwd.volume.shape();
    let (f, l, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut all_mask_grads = Vec::with_capacity(l);
    for (t, frame) in fwd.frames.iter().enumerate() {
        let mut dfeat = Tensor::zeros(&[f, h, w]);
        for c in 0..f {
            let src_base = (c * l + t) * h * w;
            let dst_base = c * h * w;
            dfeat.data_mut()[dst_base..dst_base + h * w]
                .copy_from_slice(&dx.data()[src_base..src_base + h * w]);
        }
        let (_, mask_grads) =
            add_block_backward(spec, params, frame, dfeat, &mut grads, want_mask_grads);
        all_mask_grads.push(mask_grads);
    }
    (grads, all_mask_grads)
}

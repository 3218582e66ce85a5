//! Attention mask generation.
//!
//! A face mask (convex hull of all 68 landmarks) and an organ mask (union
//! of the eyes, nose and mouth hulls) are rasterized as binary masks, each
//! smoothed with a normalized Gaussian, summed, and rescaled into `[0, 1]`.
//! Deep inside an organ the mask is exactly 1, deep inside the face but
//! outside every organ it is exactly 0.5, and far outside the face it is 0.
//!
//! The mask pyramid holds average-pooled copies of the base mask matched to
//! the feature-map resolutions where the detector injects attention.

use crate::geometry::{convex_hull, Landmark68, MOUTH, NOSE};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("degenerate hull: {0}")]
    DegenerateHull(String),
    #[error("incompatible resolution: {0}")]
    IncompatibleResolution(String),
}

/// Non-fatal conditions raised while building masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskWarning {
    /// The rasterized region has no support inside the image bounds.
    EmptySupport(&'static str),
    /// An organ's landmarks are collinear; it contributes nothing.
    DegenerateOrgan(&'static str),
}

impl std::fmt::Display for MaskWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskWarning::EmptySupport(what) => write!(f, "{what} mask has empty support"),
            MaskWarning::DegenerateOrgan(organ) => {
                write!(f, "{organ} landmarks are degenerate, skipped")
            }
        }
    }
}

/// Single-channel `[0, 1]` map over a face image. Binary masks use the same
/// representation with values in `{0, 1}`.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
    source_landmarks: Option<Landmark68>,
}

impl PartialEq for AttentionMask {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.values == other.values
    }
}

impl AttentionMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        AttentionMask {
            width,
            height,
            values: vec![0.0; width * height],
            source_landmarks: None,
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        assert!(
            values.iter().all(|v| (0.0..=1.0).contains(v)),
            "mask values must lie in [0, 1]"
        );
        AttentionMask {
            width,
            height,
            values,
            source_landmarks: None,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_landmarks(&self) -> Option<&Landmark68> {
        self.source_landmarks.as_ref()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Rasterize the convex hull of `points`: pixels whose integer coordinates
/// lie inside or on the hull are 1.
///
/// Scanline fill over the hull edges; the brute-force per-pixel oracle used
/// by the tests lives in [`crate::oracles`].
pub fn rasterize_hull_mask(
    points: &[(f64, f64)],
    size: (usize, usize),
) -> Result<AttentionMask, MaskError> {
    let (w, h) = size;
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(MaskError::DegenerateHull(format!(
            "{} points with a hull of {} vertices",
            points.len(),
            hull.len()
        )));
    }
    let mut mask = AttentionMask::zeros(w, h);
    let y_min = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = hull.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = y_min.ceil().max(0.0) as usize;
    let row_hi = y_max.floor().min(h as f64 - 1.0);
    if row_hi < 0.0 {
        return Ok(mask);
    }
    for y in row_lo..=row_hi as usize {
        let yf = y as f64;
        let mut x_lo = f64::INFINITY;
        let mut x_hi = f64::NEG_INFINITY;
        for i in 0..hull.len() {
            let (px, py) = hull[i];
            let (qx, qy) = hull[(i + 1) % hull.len()];
            if yf < py.min(qy) || yf > py.max(qy) {
                continue;
            }
            if py == qy {
                x_lo = x_lo.min(px.min(qx));
                x_hi = x_hi.max(px.max(qx));
            } else {
                let x = px + (yf - py) * (qx - px) / (qy - py);
                x_lo = x_lo.min(x);
                x_hi = x_hi.max(x);
            }
        }
        if x_lo > x_hi {
            continue;
        }
        let col_lo = x_lo.ceil().max(0.0) as usize;
        let col_hi = x_hi.floor().min(w as f64 - 1.0);
        if col_hi < 0.0 {
            continue;
        }
        for x in col_lo..=col_hi as usize {
            mask.set(x, y, 1.0);
        }
    }
    Ok(mask)
}

/// Binary face mask: convex hull of all 68 landmarks.
pub fn make_face_mask(
    landmarks: &Landmark68,
    size: (usize, usize),
) -> Result<(AttentionMask, Vec<MaskWarning>), MaskError> {
    let mask = rasterize_hull_mask(landmarks.points(), size)?;
    let mut warnings = Vec::new();
    if mask.max_value() == 0.0 {
        warnings.push(MaskWarning::EmptySupport("face"));
    }
    Ok((mask, warnings))
}

const ORGANS: [(&str, std::ops::Range<usize>); 3] = [
    ("eyes", 36..48),
    ("nose", NOSE),
    ("mouth", MOUTH),
];

/// Binary organ mask: union of the eyes (36–47), nose (27–35) and mouth
/// (48–67) hulls. A degenerate organ is skipped with a warning.
pub fn make_organ_mask(
    landmarks: &Landmark68,
    size: (usize, usize),
) -> Result<(AttentionMask, Vec<MaskWarning>), MaskError> {
    let mut mask = AttentionMask::zeros(size.0, size.1);
    let mut warnings = Vec::new();
    for (name, range) in ORGANS {
        match rasterize_hull_mask(&landmarks.points()[range], size) {
            Ok(organ) => {
                for (dst, src) in mask.values.iter_mut().zip(&organ.values) {
                    *dst = dst.max(*src);
                }
            }
            Err(MaskError::DegenerateHull(_)) => {
                warnings.push(MaskWarning::DegenerateOrgan(name));
            }
            Err(e) => return Err(e),
        }
    }
    if mask.max_value() == 0.0 {
        warnings.push(MaskWarning::EmptySupport("organ"));
    }
    Ok((mask, warnings))
}

/// Proportional default: masks stay equally soft at any resolution.
pub fn default_sigma(size: (usize, usize)) -> f64 {
    0.02 * size.0.min(size.1) as f64
}

/// Kernel radius covering 3 sigma.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (-(radius as i64)..=radius as i64)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

#[inline]
fn reflect(i: i64, n: i64) -> usize {
    // Mirror at the border between pixels: -1 -> 0, -2 -> 1, n -> n-1.
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Gaussian smoothing with a normalized kernel and reflect padding.
///
/// Separable row/column passes; equivalent to the full 2D convolution the
/// test oracle performs.
pub fn smooth_mask(mask: &AttentionMask, sigma: f64, radius: usize) -> AttentionMask {
    assert!(sigma > 0.0, "sigma must be positive");
    let kernel = gaussian_kernel(sigma, radius);
    let (w, h) = (mask.width, mask.height);
    let r = radius as i64;

    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + ki as i64 - r, w as i64);
                acc += kv * mask.values[y * w + sx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + ki as i64 - r, h as i64);
                acc += kv * rows[sy * w + x];
            }
            out[y * w + x] = acc.clamp(0.0, 1.0);
        }
    }
    AttentionMask {
        width: w,
        height: h,
        values: out,
        source_landmarks: mask.source_landmarks.clone(),
    }
}

/// Full attention mask: smoothed face mask plus smoothed organ mask,
/// rescaled by the maximum (all zeros stay all zeros).
pub fn generate_attention_mask(
    landmarks: &Landmark68,
    size: (usize, usize),
    sigma: f64,
) -> Result<(AttentionMask, Vec<MaskWarning>), MaskError> {
    let radius = kernel_radius(sigma);
    let (face, mut warnings) = make_face_mask(landmarks, size)?;
    let (organ, organ_warnings) = make_organ_mask(landmarks, size)?;
    warnings.extend(organ_warnings);
    let face = smooth_mask(&face, sigma, radius);
    let organ = smooth_mask(&organ, sigma, radius);

    let mut values: Vec<f64> = face
        .values
        .iter()
        .zip(&organ.values)
        .map(|(a, b)| a + b)
        .collect();
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut values {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    }
    Ok((
        AttentionMask {
            width: size.0,
            height: size.1,
            values,
            source_landmarks: Some(landmarks.clone()),
        },
        warnings,
    ))
}

/// Average-pooled copies of the base mask at strictly decreasing
/// resolutions. Level 0 is the base itself at the network input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPyramid {
    levels: Vec<AttentionMask>,
}

impl MaskPyramid {
    /// Assemble a pyramid from explicit levels (base first); resolutions
    /// must strictly decrease.
    pub fn from_levels(levels: Vec<AttentionMask>) -> Result<MaskPyramid, MaskError> {
        if levels.is_empty() {
            return Err(MaskError::IncompatibleResolution("no levels".into()));
        }
        for pair in levels.windows(2) {
            if pair[1].width >= pair[0].width || pair[1].height >= pair[0].height {
                return Err(MaskError::IncompatibleResolution(format!(
                    "level {}x{} does not strictly shrink from {}x{}",
                    pair[1].width, pair[1].height, pair[0].width, pair[0].height
                )));
            }
        }
        Ok(MaskPyramid { levels })
    }

    pub fn levels(&self) -> &[AttentionMask] {
        &self.levels
    }

    pub fn base(&self) -> &AttentionMask {
        &self.levels[0]
    }

    /// Level matching a feature-map resolution, if present.
    pub fn level_for(&self, width: usize, height: usize) -> Option<&AttentionMask> {
        self.levels
            .iter()
            .find(|m| m.width == width && m.height == height)
    }
}

/// Pool the base mask down to each target resolution with kernel = stride =
/// base/target per axis. Each target must divide the base evenly and be
/// strictly smaller than its predecessor.
pub fn build_mask_pyramid(
    base: &AttentionMask,
    targets: &[(usize, usize)],
) -> Result<MaskPyramid, MaskError> {
    let mut levels = vec![base.clone()];
    let (mut prev_w, mut prev_h) = (base.width, base.height);
    for &(tw, th) in targets {
        if tw == 0 || th == 0 || base.width % tw != 0 || base.height % th != 0 {
            return Err(MaskError::IncompatibleResolution(format!(
                "target {tw}x{th} does not evenly divide base {}x{}",
                base.width, base.height
            )));
        }
        if tw >= prev_w || th >= prev_h {
            return Err(MaskError::IncompatibleResolution(format!(
                "target {tw}x{th} does not strictly shrink from {prev_w}x{prev_h}"
            )));
        }
        levels.push(average_pool(base, base.width / tw, base.height / th));
        prev_w = tw;
        prev_h = th;
    }
    Ok(MaskPyramid { levels })
}

/// Average pooling with kernel = stride = (fw, fh).
pub fn average_pool(mask: &AttentionMask, fw: usize, fh: usize) -> AttentionMask {
    let (w, h) = (mask.width / fw, mask.height / fh);
    let mut out = AttentionMask::zeros(w, h);
    let norm = 1.0 / (fw * fh) as f64;
    for oy in 0..h {
        for ox in 0..w {
            let mut acc = 0.0;
            for dy in 0..fh {
                for dx in 0..fw {
                    acc += mask.values[(oy * fh + dy) * mask.width + ox * fw + dx];
                }
            }
            out.values[oy * w + ox] = acc * norm;
        }
    }
    out.source_landmarks = mask.source_landmarks.clone();
    out
}

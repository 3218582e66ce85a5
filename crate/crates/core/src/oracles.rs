//! Brute-force reference implementations used by the test suites.
//!
//! These deliberately take different algorithmic routes from the production
//! code so each pair forms an independent cross-check: gift-wrapping instead
//! of monotone chain, per-pixel half-plane tests instead of scanline fill,
//! direct 2D convolution instead of separable passes.

use crate::maskgen::AttentionMask;

/// Convex hull by gift wrapping (Jarvis march). Returns `None` when the
/// points are collinear.
pub fn jarvis_hull(points: &[(f64, f64)]) -> Option<Vec<(f64, f64)>> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return None;
    }
    let start = pts
        .iter()
        .cloned()
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .unwrap();
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let dist2 = |a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
    };
    let mut hull = vec![start];
    let mut current = start;
    loop {
        let mut candidate = pts[0];
        if candidate == current {
            candidate = pts[1];
        }
        for &p in &pts {
            if p == current {
                continue;
            }
            let c = cross(current, candidate, p);
            if c > 0.0 || (c == 0.0 && dist2(current, p) > dist2(current, candidate)) {
                candidate = p;
            }
        }
        if candidate == start {
            break;
        }
        hull.push(candidate);
        current = candidate;
        if hull.len() > pts.len() {
            return None; // numeric degeneracy; treat as collinear
        }
    }
    if hull.len() < 3 {
        None
    } else {
        Some(hull)
    }
}

/// Is the point inside or on the convex polygon? Works for either winding:
/// every edge cross product must agree with the sign of the signed area.
pub fn point_in_convex_polygon(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    let mut signed_area = 0.0;
    for i in 0..hull.len() {
        let (ax, ay) = hull[i];
        let (bx, by) = hull[(i + 1) % hull.len()];
        signed_area += ax * by - bx * ay;
    }
    let orient = signed_area.signum();
    for i in 0..hull.len() {
        let (ax, ay) = hull[i];
        let (bx, by) = hull[(i + 1) % hull.len()];
        let cross = (bx - ax) * (p.1 - ay) - (by - ay) * (p.0 - ax);
        if cross * orient < 0.0 {
            return false;
        }
    }
    true
}

/// Per-pixel point-in-polygon rasterization of the hull of `points`.
/// Returns `None` for collinear input.
pub fn rasterize_hull_oracle(points: &[(f64, f64)], size: (usize, usize)) -> Option<Vec<f64>> {
    let hull = jarvis_hull(points)?;
    let (w, h) = size;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if point_in_convex_polygon(&hull, (x as f64, y as f64)) {
                out[y * w + x] = 1.0;
            }
        }
    }
    Some(out)
}

/// Direct double-loop 2D Gaussian convolution with reflect padding and a
/// normalized kernel; O(N^2 k^2).
pub fn smooth_mask_oracle(mask: &AttentionMask, sigma: f64, radius: usize) -> Vec<f64> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let r = radius as i64;
    let mut kernel = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            kernel.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = kernel.iter().sum();
    let reflect = |mut i: i64, n: i64| -> usize {
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };
    let mut out = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut ki = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sy = reflect(y + dy, h);
                    let sx = reflect(x + dx, w);
                    acc += kernel[ki] * mask.values()[sy * w as usize + sx];
                    ki += 1;
                }
            }
            out[(y * w + x) as usize] = acc / total;
        }
    }
    out
}

/// Central finite difference of a scalar function at `x`.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Relative error with an absolute floor, as used by the gradient checks.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

//! Landmark representation and similarity-transform face alignment.
//!
//! Faces are canonicalized before mask generation and detection: a
//! least-squares similarity transform maps the detected eye centers and
//! mouth center onto fixed fractions of the output crop. The 68-point
//! layout follows the standard convention: 0–16 jaw, 17–26 eyebrows,
//! 27–35 nose, 36–41 right eye, 42–47 left eye, 48–67 mouth.

use crate::image::Image;
use thiserror::Error;

pub const NUM_LANDMARKS: usize = 68;

pub const JAW: std::ops::Range<usize> = 0..17;
pub const EYEBROWS: std::ops::Range<usize> = 17..27;
pub const NOSE: std::ops::Range<usize> = 27..36;
pub const RIGHT_EYE: std::ops::Range<usize> = 36..42;
pub const LEFT_EYE: std::ops::Range<usize> = 42..48;
pub const MOUTH: std::ops::Range<usize> = 48..68;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("expected 68 landmarks, got {0}")]
    WrongCount(usize),
    #[error("landmark {index} is not finite")]
    NotFinite { index: usize },
    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(String),
    #[error("landmark text is malformed: {0}")]
    Malformed(String),
}

/// 68 named 2D facial landmark points, pixel units, image frame.
///
/// Points may fall outside image bounds (detectors extrapolate), but every
/// coordinate must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark68 {
    points: Vec<(f64, f64)>,
}

impl Landmark68 {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, GeometryError> {
        if points.len() != NUM_LANDMARKS {
            return Err(GeometryError::WrongCount(points.len()));
        }
        for (index, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(GeometryError::NotFinite { index });
            }
        }
        Ok(Landmark68 { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Mean of the 6 landmarks of the subject's right eye (indices 36–41).
    pub fn right_eye_center(&self) -> (f64, f64) {
        mean(&self.points[RIGHT_EYE])
    }

    /// Mean of the 6 landmarks of the subject's left eye (indices 42–47).
    pub fn left_eye_center(&self) -> (f64, f64) {
        mean(&self.points[LEFT_EYE])
    }

    /// Mean of the 20 mouth landmarks (indices 48–67).
    pub fn mouth_center(&self) -> (f64, f64) {
        mean(&self.points[MOUTH])
    }

    pub fn map(&self, transform: &SimilarityTransform) -> Landmark68 {
        Landmark68 {
            points: self.points.iter().map(|&p| transform.apply(p)).collect(),
        }
    }
}

fn mean(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
    (sx / n, sy / n)
}

/// Provider of landmarks for a face image. No detector is bundled; this is
/// the plug point for an external one. Fixture landmarks come from sidecar
/// files instead.
pub trait LandmarkProvider {
    fn landmarks(&self, image: &Image) -> Result<Landmark68, GeometryError>;
}

/// Target positions for alignment, as fractions of the output crop.
///
/// The subject's right eye sits on the viewer's left, hence the smaller x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalLayout {
    pub right_eye: (f64, f64),
    pub left_eye: (f64, f64),
    pub mouth: (f64, f64),
}

impl Default for CanonicalLayout {
    fn default() -> Self {
        CanonicalLayout {
            right_eye: (0.35, 0.40),
            left_eye: (0.65, 0.40),
            mouth: (0.50, 0.75),
        }
    }
}

impl CanonicalLayout {
    /// Anchor positions in pixels for a given output size.
    pub fn anchors(&self, output_size: (usize, usize)) -> [(f64, f64); 3] {
        let (w, h) = (output_size.0 as f64, output_size.1 as f64);
        [
            (self.right_eye.0 * w, self.right_eye.1 * h),
            (self.left_eye.0 * w, self.left_eye.1 * h),
            (self.mouth.0 * w, self.mouth.1 * h),
        ]
    }
}

/// Similarity transform `p ↦ s·R(φ)·p + t` with `R` the counterclockwise
/// rotation matrix in (x right, y down) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: (0.0, 0.0),
        }
    }

    /// From the linear part `[[a, -b], [b, a]]` and translation.
    pub fn from_linear(a: f64, b: f64, tx: f64, ty: f64) -> Self {
        SimilarityTransform {
            scale: a.hypot(b),
            rotation: b.atan2(a),
            translation: (tx, ty),
        }
    }

    #[inline]
    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let (a, b) = (self.scale * c, self.scale * s);
        (a * x - b * y + self.translation.0, b * x + a * y + self.translation.1)
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let (c, s) = ((-self.rotation).cos(), (-self.rotation).sin());
        let (tx, ty) = self.translation;
        SimilarityTransform {
            scale: inv_scale,
            rotation: -self.rotation,
            translation: (
                -inv_scale * (c * tx - s * ty),
                -inv_scale * (s * tx + c * ty),
            ),
        }
    }
}

/// Least-squares similarity fit mapping the detected eye centers and mouth
/// center onto the canonical positions for the given output size.
pub fn estimate_alignment(
    landmarks: &Landmark68,
    canonical: &CanonicalLayout,
    output_size: (usize, usize),
) -> Result<SimilarityTransform, GeometryError> {
    let re = landmarks.right_eye_center();
    let le = landmarks.left_eye_center();
    let inter_ocular = (re.0 - le.0).hypot(re.1 - le.1);
    if inter_ocular < 1e-9 {
        return Err(GeometryError::DegenerateLandmarks(
            "eye centers coincide (zero inter-ocular distance)".into(),
        ));
    }
    if hull_area(landmarks.points()) < 1e-9 {
        return Err(GeometryError::DegenerateLandmarks(
            "all landmarks are collinear (zero-area hull)".into(),
        ));
    }

    let src = [re, le, landmarks.mouth_center()];
    let dst = canonical.anchors(output_size);
    Ok(fit_similarity(&src, &dst))
}

/// Exact least-squares similarity (no reflection) over point pairs.
fn fit_similarity(src: &[(f64, f64)], dst: &[(f64, f64)]) -> SimilarityTransform {
    let n = src.len() as f64;
    let sm = mean(src);
    let dm = mean(dst);
    let mut num_a = 0.0;
    let mut num_b = 0.0;
    let mut den = 0.0;
    for (&(sx, sy), &(dx, dy)) in src.iter().zip(dst) {
        let (sx, sy) = (sx - sm.0, sy - sm.1);
        let (dx, dy) = (dx - dm.0, dy - dm.1);
        num_a += sx * dx + sy * dy;
        num_b += sx * dy - sy * dx;
        den += sx * sx + sy * sy;
    }
    debug_assert!(den > 0.0 && n >= 2.0);
    let a = num_a / den;
    let b = num_b / den;
    let tx = dm.0 - (a * sm.0 - b * sm.1);
    let ty = dm.1 - (b * sm.0 + a * sm.1);
    SimilarityTransform::from_linear(a, b, tx, ty)
}

/// Resample `image` through `transform` into an `output_size` crop and map
/// the landmarks along with it.
///
/// Output pixel (x, y) samples the source at the inverse-transformed
/// position with bilinear interpolation; samples falling outside the source
/// are 0.
pub fn warp_face(
    image: &Image,
    landmarks: &Landmark68,
    transform: &SimilarityTransform,
    output_size: (usize, usize),
) -> (Image, Landmark68) {
    let (ow, oh) = output_size;
    assert!(ow > 0 && oh > 0, "output size must be positive");
    let inv = transform.inverse();
    let mut out = Image::new(ow, oh, image.channels());
    for oy in 0..oh {
        for ox in 0..ow {
            let (sx, sy) = inv.apply((ox as f64, oy as f64));
            for c in 0..image.channels() {
                out.set(c, ox, oy, bilinear(image, c, sx, sy));
            }
        }
    }
    (out, landmarks.map(transform))
}

fn bilinear(image: &Image, c: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let sample = |xi: i64, yi: i64| -> f64 {
        if xi >= 0 && (xi as usize) < image.width() && yi >= 0 && (yi as usize) < image.height() {
            image.get(c, xi as usize, yi as usize)
        } else {
            0.0
        }
    };
    sample(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + sample(x0 + 1, y0) * fx * (1.0 - fy)
        + sample(x0, y0 + 1) * (1.0 - fx) * fy
        + sample(x0 + 1, y0 + 1) * fx * fy
}

/// Convex hull by Andrew's monotone chain, counterclockwise in (x, y-down)
/// coordinates. Collinear input collapses to fewer than 3 vertices.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Shoelace area of the convex hull of the points.
pub fn hull_area(points: &[(f64, f64)]) -> f64 {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..hull.len() {
        let (x0, y0) = hull[i];
        let (x1, y1) = hull[(i + 1) % hull.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc.abs() / 2.0
}

/// Parse a landmark sidecar: 68 x,y pairs, whitespace separated. Pairs
/// written as `x,y` tokens are accepted too.
pub fn parse_landmarks_text(text: &str) -> Result<Landmark68, GeometryError> {
    let mut values: Vec<f64> = Vec::with_capacity(2 * NUM_LANDMARKS);
    for token in text.split_whitespace() {
        for part in token.split(',').filter(|p| !p.is_empty()) {
            let v: f64 = part
                .parse()
                .map_err(|_| GeometryError::Malformed(format!("bad number {part:?}")))?;
            values.push(v);
        }
    }
    if values.len() != 2 * NUM_LANDMARKS {
        return Err(GeometryError::Malformed(format!(
            "expected {} coordinates, got {}",
            2 * NUM_LANDMARKS,
            values.len()
        )));
    }
    Landmark68::new(values.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

pub fn format_landmarks_text(landmarks: &Landmark68) -> String {
    let mut out = String::new();
    for (i, (x, y)) in landmarks.points().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{x} {y}"));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_landmarks() -> Landmark68 {
        // Valid 68-point set with exact eye/mouth centers at canonical
        // positions for a 100x100 crop.
        let layout = CanonicalLayout::default();
        let anchors = layout.anchors((100, 100));
        let mut pts = vec![(50.0, 50.0); NUM_LANDMARKS];
        // Jaw spread out so the hull has area.
        for (k, p) in pts[JAW].iter_mut().enumerate() {
            *p = (20.0 + 4.0 * k as f64, 80.0 - ((k as f64) - 8.0).abs());
        }
        place_ring(&mut pts, RIGHT_EYE, anchors[0], 4.0);
        place_ring(&mut pts, LEFT_EYE, anchors[1], 4.0);
        place_ring(&mut pts, MOUTH, anchors[2], 8.0);
        for (k, p) in pts[NOSE].iter_mut().enumerate() {
            *p = (47.0 + (k % 3) as f64 * 3.0, 50.0 + (k / 3) as f64 * 3.0);
        }
        for (k, p) in pts[EYEBROWS].iter_mut().enumerate() {
            *p = (25.0 + 5.0 * k as f64, 30.0);
        }
        Landmark68::new(pts).unwrap()
    }

    fn place_ring(
        pts: &mut [(f64, f64)],
        range: std::ops::Range<usize>,
        center: (f64, f64),
        radius: f64,
    ) {
        let n = range.len();
        for (k, p) in pts[range].iter_mut().enumerate() {
            let angle = std::f64::consts::TAU * k as f64 / n as f64;
            *p = (center.0 + radius * angle.cos(), center.1 + radius * angle.sin());
        }
    }

    fn rotate_about(p: (f64, f64), center: (f64, f64), phi: f64) -> (f64, f64) {
        let (c, s) = (phi.cos(), phi.sin());
        let (x, y) = (p.0 - center.0, p.1 - center.1);
        (c * x - s * y + center.0, s * x + c * y + center.1)
    }

    #[test]
    fn identity_when_landmarks_already_canonical() {
        let lm = square_landmarks();
        let t = estimate_alignment(&lm, &CanonicalLayout::default(), (100, 100)).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9, "scale {}", t.scale);
        assert!(t.rotation.abs() < 1e-9, "rotation {}", t.rotation);
        assert!(t.translation.0.abs() < 1e-6 && t.translation.1.abs() < 1e-6);
    }

    #[test]
    fn recovers_minus_30_degrees_from_rotated_landmarks() {
        let lm = square_landmarks();
        let phi = 30.0_f64.to_radians();
        let rotated = Landmark68::new(
            lm.points()
                .iter()
                .map(|&p| rotate_about(p, (50.0, 50.0), phi))
                .collect(),
        )
        .unwrap();
        let t = estimate_alignment(&rotated, &CanonicalLayout::default(), (100, 100)).unwrap();
        assert!(
            (t.rotation + phi).abs() < 1e-6,
            "expected -30deg, got {} rad",
            t.rotation
        );
        assert!((t.scale - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coincident_eye_centers_are_degenerate() {
        let lm = square_landmarks();
        let mut pts = lm.points().to_vec();
        for i in LEFT_EYE {
            pts[i] = pts[i - 6]; // collapse left eye onto right eye
        }
        let lm = Landmark68::new(pts).unwrap();
        let err = estimate_alignment(&lm, &CanonicalLayout::default(), (100, 100)).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateLandmarks(_)));
    }

    #[test]
    fn collinear_landmarks_are_degenerate() {
        let pts: Vec<(f64, f64)> = (0..NUM_LANDMARKS).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let lm = Landmark68::new(pts).unwrap();
        let err = estimate_alignment(&lm, &CanonicalLayout::default(), (100, 100)).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateLandmarks(_)));
    }

    #[test]
    fn translation_only_changes_translation_component() {
        let lm = square_landmarks();
        let base = estimate_alignment(&lm, &CanonicalLayout::default(), (100, 100)).unwrap();
        let shifted = Landmark68::new(
            lm.points().iter().map(|&(x, y)| (x + 13.0, y - 7.5)).collect(),
        )
        .unwrap();
        let t = estimate_alignment(&shifted, &CanonicalLayout::default(), (100, 100)).unwrap();
        assert!((t.scale - base.scale).abs() < 1e-9);
        assert!((t.rotation - base.rotation).abs() < 1e-9);
        assert!(
            (t.translation.0 - base.translation.0).abs() > 1.0
                || (t.translation.1 - base.translation.1).abs() > 1.0
        );
    }

    #[test]
    fn round_trip_through_inverse_is_tight() {
        let t = SimilarityTransform {
            scale: 1.7,
            rotation: 0.43,
            translation: (12.0, -3.5),
        };
        let inv = t.inverse();
        for &p in &[(0.0, 0.0), (10.0, 20.0), (-5.0, 113.0), (300.5, 7.25)] {
            let q = inv.apply(t.apply(p));
            let scale = p.0.abs().max(p.1.abs()).max(1.0);
            assert!((q.0 - p.0).abs() / scale < 1e-6);
            assert!((q.1 - p.1).abs() / scale < 1e-6);
        }
    }

    #[test]
    fn warp_identity_preserves_image() {
        let mut img = Image::new(16, 12, 3);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 251) as f64 / 250.0;
        }
        let lm = square_landmarks();
        let (out, _) = warp_face(&img, &lm, &SimilarityTransform::identity(), (16, 12));
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn warp_translation_shifts_landmarks_exactly() {
        let img = Image::new(16, 16, 1);
        let lm = square_landmarks();
        let t = SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: (10.0, 0.0),
        };
        let (_, mapped) = warp_face(&img, &lm, &t, (16, 16));
        for (m, o) in mapped.points().iter().zip(lm.points()) {
            assert_eq!(m.0, o.0 + 10.0);
            assert_eq!(m.1, o.1);
        }
    }

    #[test]
    fn warp_90_degree_rotation_matches_grid_permutation() {
        // Rotation by 90deg about the center of an NxN grid maps pixel
        // centers onto pixel centers, so the warp must equal the exact
        // array rotation.
        let n = 9usize;
        let mut img = Image::new(n, n, 1);
        for y in 0..n {
            for x in 0..n {
                img.set(0, x, y, ((3 * x + 7 * y) % 11) as f64 / 10.0);
            }
        }
        let c = (n as f64 - 1.0) / 2.0;
        let phi = std::f64::consts::FRAC_PI_2;
        let t = SimilarityTransform {
            scale: 1.0,
            rotation: phi,
            translation: (
                c - (phi.cos() * c - phi.sin() * c),
                c - (phi.sin() * c + phi.cos() * c),
            ),
        };
        let lm = square_landmarks();
        let (out, _) = warp_face(&img, &lm, &t, (n, n));
        // Independent oracle: out(x, y) = in(y, n-1-x) for a +90deg turn in
        // y-down coordinates.
        for y in 0..n {
            for x in 0..n {
                let expected = img.get(0, y, n - 1 - x);
                assert!(
                    (out.get(0, x, y) - expected).abs() < 1e-9,
                    "mismatch at ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn alignment_places_eye_centers_on_canonical_positions() {
        let lm = square_landmarks();
        // Random-ish similarity distortions of the fixture.
        for (k, &(scale, phi, dx, dy)) in [
            (0.8, 0.2, 5.0, -3.0),
            (1.3, -0.4, -10.0, 8.0),
            (1.0, 0.0, 30.0, 30.0),
            (0.6, 0.7, 0.0, 0.0),
        ]
        .iter()
        .enumerate()
        {
            let t = SimilarityTransform {
                scale,
                rotation: phi,
                translation: (dx, dy),
            };
            let moved = lm.map(&t);
            let layout = CanonicalLayout::default();
            let align = estimate_alignment(&moved, &layout, (100, 100)).unwrap();
            let back = moved.map(&align);
            let anchors = layout.anchors((100, 100));
            let re = back.right_eye_center();
            let le = back.left_eye_center();
            assert!(
                (re.0 - anchors[0].0).hypot(re.1 - anchors[0].1) < 0.5,
                "case {k}: right eye off canonical"
            );
            assert!(
                (le.0 - anchors[1].0).hypot(le.1 - anchors[1].1) < 0.5,
                "case {k}: left eye off canonical"
            );
        }
    }

    #[test]
    fn sidecar_text_round_trips_and_accepts_commas() {
        let lm = square_landmarks();
        let text = format_landmarks_text(&lm);
        let back = parse_landmarks_text(&text).unwrap();
        assert_eq!(lm, back);
        let with_commas: String = lm
            .points()
            .iter()
            .map(|(x, y)| format!("{x},{y}"))
            .collect::<Vec<_>>()
            .join(" ");
        assert_eq!(parse_landmarks_text(&with_commas).unwrap(), lm);
        assert!(parse_landmarks_text("1 2 3").is_err());
    }

    #[test]
    fn hull_of_collinear_points_has_zero_area() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64)).collect();
        assert_eq!(hull_area(&pts), 0.0);
        let square = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        assert!((hull_area(&square) - 16.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn transform_round_trip_is_tight_everywhere(
            scale in 0.1f64..10.0,
            rotation in -3.1f64..3.1,
            tx in -200.0f64..200.0,
            ty in -200.0f64..200.0,
            px in -500.0f64..500.0,
            py in -500.0f64..500.0,
        ) {
            let t = SimilarityTransform { scale, rotation, translation: (tx, ty) };
            let q = t.inverse().apply(t.apply((px, py)));
            let denom = px.abs().max(py.abs()).max(1.0);
            proptest::prop_assert!((q.0 - px).abs() / denom < 1e-6);
            proptest::prop_assert!((q.1 - py).abs() / denom < 1e-6);
        }
    }
}

//! Projective point mapping and four-point homography estimation.
//!
//! A [`Homography`] `H` acts on column vectors, `(x, y, w')ᵀ = H (u, v, 1)ᵀ`, and is
//! stored in a canonical form: Frobenius norm 1 with the first nonzero entry
//! (row-major) positive, so two matrices describing the same map compare equal.
//!
//! Alignment convention: `H` maps detected-frame coordinates to aligned-frame
//! coordinates. Corner orders are always TL, TR, BR, BL.

use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Point2;

/// Horizon threshold for the homogeneous coordinate.
pub const HORIZON_EPS: f64 = 1e-12;
/// Minimum |det| of a canonical homography.
pub const DET_EPS: f64 = 1e-12;
/// Entries below this magnitude are skipped when fixing the canonical sign.
const SIGN_EPS: f64 = 1e-12;
/// Twice-area threshold for collinearity, measured on Hartley-normalized points.
const COLLINEAR_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point maps to infinity (|w'| = {0:e})")]
    PointAtInfinity(f64),
    #[error("matrix is not invertible (|det| = {0:e})")]
    Singular(f64),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("linear system could not be solved")]
    SingularSystem,
    #[error("invalid ellipse: a = {a}, b = {b}")]
    InvalidEllipse { a: f64, b: f64 },
    #[error("output size must be at least 2x2, got {0}x{1}")]
    InvalidSize(usize, usize),
}

/// 3×3 projective map in canonical normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HomographyRepr", into = "HomographyRepr")]
pub struct Homography {
    m: [f64; 9],
}

#[derive(Serialize, Deserialize)]
struct HomographyRepr {
    h: [f64; 9],
}

impl TryFrom<HomographyRepr> for Homography {
    type Error = GeometryError;
    fn try_from(r: HomographyRepr) -> Result<Self, GeometryError> {
        Homography::from_row_major(r.h)
    }
}

impl From<Homography> for HomographyRepr {
    fn from(h: Homography) -> Self {
        HomographyRepr { h: h.m }
    }
}

impl Homography {
    /// Canonicalizes and validates nine row-major entries.
    pub fn from_row_major(m: [f64; 9]) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GeometryError::Singular(0.0));
        }
        // already unit-norm input is kept as is so canonicalization is idempotent
        let mut c = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            m
        } else {
            m.map(|v| v / norm)
        };
        let lead = c
            .iter()
            .copied()
            .find(|v| v.abs() > SIGN_EPS)
            .unwrap_or(1.0);
        if lead < 0.0 {
            c = c.map(|v| -v);
        }
        let det = Matrix3::from_row_slice(&c).determinant();
        if !(det.abs() > DET_EPS) {
            return Err(GeometryError::Singular(det.abs()));
        }
        Ok(Self { m: c })
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        let mut a = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                a[3 * r + c] = m[(r, c)];
            }
        }
        Self::from_row_major(a)
    }

    pub fn identity() -> Self {
        Self::from_row_major([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .expect("identity is invertible")
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::from_row_major([1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0])
            .expect("translation is invertible")
    }

    /// Axis-aligned scaling about the origin.
    pub fn scaling(sx: f64, sy: f64) -> Result<Self, GeometryError> {
        Self::from_row_major([sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn as_row_major(&self) -> &[f64; 9] {
        &self.m
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.m)
    }

    /// Same map rescaled so that `h33 = 1` where that is numerically safe.
    ///
    /// Used for point evaluation: it makes the identity and pure translations
    /// evaluate exactly.
    pub fn dehomogenized(&self) -> [f64; 9] {
        let s = self.m[8];
        if s.abs() > 1e-8 {
            self.m.map(|v| v / s)
        } else {
            self.m
        }
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or(GeometryError::Singular(0.0))?;
        Self::from_matrix(&inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        Self::from_matrix(&(self.matrix() * other.matrix()))
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.m
            .iter()
            .zip(&other.m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn project(&self, p: Point2) -> Result<Point2, GeometryError> {
        project_with(&self.dehomogenized(), p)
    }
}

/// Maps `p` through a row-major matrix; fails near the horizon line.
#[inline]
pub(crate) fn project_with(m: &[f64; 9], p: Point2) -> Result<Point2, GeometryError> {
    let w = m[6] * p.x + m[7] * p.y + m[8];
    if w.abs() <= HORIZON_EPS {
        return Err(GeometryError::PointAtInfinity(w));
    }
    let x = m[0] * p.x + m[1] * p.y + m[2];
    let y = m[3] * p.x + m[4] * p.y + m[5];
    Ok(Point2::new(x / w, y / w))
}

/// Maps `p` through `h`.
pub fn project(h: &Homography, p: Point2) -> Result<Point2, GeometryError> {
    h.project(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: Point2,
    pub dst: Point2,
}

impl Correspondence {
    pub const fn new(src: Point2, dst: Point2) -> Self {
        Self { src, dst }
    }
}

/// Per-corner displacements in pixels, TL, TR, BR, BL.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadOffsets {
    pub d: [[f64; 2]; 4],
}

impl QuadOffsets {
    pub fn zeros() -> Self {
        Self::default()
    }

    /// Flattened `(dx0, dy0, dx1, dy1, ...)`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.d.iter().flatten().copied().collect()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 8, "offsets have eight components");
        let mut d = [[0.0; 2]; 4];
        for (i, pair) in d.iter_mut().enumerate() {
            *pair = [v[2 * i], v[2 * i + 1]];
        }
        Self { d }
    }

    /// Displacement of each image-frame corner under `h`.
    pub fn from_homography(
        frame_w: usize,
        frame_h: usize,
        h: &Homography,
    ) -> Result<Self, GeometryError> {
        let mut d = [[0.0; 2]; 4];
        for (slot, corner) in d.iter_mut().zip(frame_corners(frame_w, frame_h)) {
            let moved = h.project(corner)?;
            *slot = [moved.x - corner.x, moved.y - corner.y];
        }
        Ok(Self { d })
    }
}

/// Elliptical dial outline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub center: Point2,
    /// Semi-major length.
    pub a: f64,
    /// Semi-minor length.
    pub b: f64,
    /// Major-axis rotation in radians.
    pub phi: f64,
}

impl EllipseParams {
    pub fn new(center: Point2, a: f64, b: f64, phi: f64) -> Result<Self, GeometryError> {
        if !(b > 0.0 && a >= b && a.is_finite() && phi.is_finite() && center.is_finite()) {
            return Err(GeometryError::InvalidEllipse { a, b });
        }
        Ok(Self { center, a, b, phi })
    }

    /// Boundary point at parameter `t`.
    pub fn point_at(&self, t: f64) -> Point2 {
        let (s, c) = self.phi.sin_cos();
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        Point2::new(self.center.x + u * c - v * s, self.center.y + u * s + v * c)
    }
}

/// Rectangular dial outline, vertices TL, TR, BR, BL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    vertices: [Point2; 4],
}

impl Quad {
    pub fn new(vertices: [Point2; 4]) -> Result<Self, GeometryError> {
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if any_three_collinear(&vertices) {
            return Err(GeometryError::Degenerate(
                "three quad vertices are collinear",
            ));
        }
        // edges 0-1 and 2-3, or 1-2 and 3-0, must not cross
        if segments_cross(vertices[0], vertices[1], vertices[2], vertices[3])
            || segments_cross(vertices[1], vertices[2], vertices[3], vertices[0])
        {
            return Err(GeometryError::Degenerate("quad is self-intersecting"));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2; 4] {
        &self.vertices
    }
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_cross(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn any_three_collinear(pts: &[Point2; 4]) -> bool {
    // scale-free test on normalized coordinates
    let Some((norm, _)) = hartley_normalize(pts) else {
        return true;
    };
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    TRIPLES
        .iter()
        .any(|&(i, j, k)| cross(norm[i], norm[j], norm[k]).abs() <= COLLINEAR_EPS)
}

/// Translates the centroid to the origin and scales to mean distance √2.
fn hartley_normalize(pts: &[Point2; 4]) -> Option<([Point2; 4], Matrix3<f64>)> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    Some((pts.map(|p| Point2::new(s * (p.x - cx), s * (p.y - cy))), t))
}

/// Exact homography from four correspondences (normalized DLT, SVD null space).
pub fn solve_dlt(corrs: &[Correspondence; 4]) -> Result<Homography, GeometryError> {
    let src = corrs.map(|c| c.src);
    let dst = corrs.map(|c| c.dst);
    if src.iter().chain(&dst).any(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if any_three_collinear(&src) {
        return Err(GeometryError::Degenerate(
            "three source points are collinear",
        ));
    }
    if any_three_collinear(&dst) {
        return Err(GeometryError::Degenerate(
            "three destination points are collinear",
        ));
    }
    if src == dst {
        return Ok(Homography::identity());
    }

    let (src_n, t_src) = hartley_normalize(&src).ok_or(GeometryError::SingularSystem)?;
    let (dst_n, t_dst) = hartley_normalize(&dst).ok_or(GeometryError::SingularSystem)?;

    // 8 equations padded with a zero row so the SVD exposes the full right null space.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (i, (s, d)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::SingularSystem)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(GeometryError::SingularSystem)?;
    let h = v_t.row(min_idx);
    let h_n = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or(GeometryError::SingularSystem)?;
    let denorm = t_dst_inv * h_n * t_src;
    Homography::from_matrix(&denorm).map_err(|e| match e {
        GeometryError::Singular(_) | GeometryError::NonFinite => GeometryError::SingularSystem,
        other => other,
    })
}

/// Axis endpoints of `e` paired with the same directions on the circumcircle
/// (radius `a`). Order: major +, major −, minor +, minor −.
pub fn ellipse_alignment_pairs(e: &EllipseParams) -> [Correspondence; 4] {
    let (s, c) = e.phi.sin_cos();
    let major = Point2::new(c, s);
    let minor = Point2::new(-s, c);
    let at = |dir: Point2, r: f64| e.center + dir * r;
    [
        Correspondence::new(at(major, e.a), at(major, e.a)),
        Correspondence::new(at(major, -e.a), at(major, -e.a)),
        Correspondence::new(at(minor, e.b), at(minor, e.a)),
        Correspondence::new(at(minor, -e.b), at(minor, -e.a)),
    ]
}

/// Pixel-center corners of a `w × h` frame: TL, TR, BR, BL.
pub fn frame_corners(w: usize, h: usize) -> [Point2; 4] {
    let (xr, yb) = (w as f64 - 1.0, h as f64 - 1.0);
    [
        Point2::new(0.0, 0.0),
        Point2::new(xr, 0.0),
        Point2::new(xr, yb),
        Point2::new(0.0, yb),
    ]
}

/// Quad vertices paired with the output frame's corners.
pub fn quad_alignment_pairs(
    q: &Quad,
    out_w: usize,
    out_h: usize,
) -> Result<[Correspondence; 4], GeometryError> {
    if out_w < 2 || out_h < 2 {
        return Err(GeometryError::InvalidSize(out_w, out_h));
    }
    let corners = frame_corners(out_w, out_h);
    Ok(std::array::from_fn(|i| {
        Correspondence::new(q.vertices[i], corners[i])
    }))
}

/// Homography taking each frame corner to the corner displaced by its offset.
pub fn offsets_to_homography(
    frame_w: usize,
    frame_h: usize,
    d: &QuadOffsets,
) -> Result<Homography, GeometryError> {
    if frame_w < 2 || frame_h < 2 {
        return Err(GeometryError::InvalidSize(frame_w, frame_h));
    }
    let corners = frame_corners(frame_w, frame_h);
    let pairs = std::array::from_fn(|i| {
        let [dx, dy] = d.d[i];
        Correspondence::new(corners[i], corners[i] + Point2::new(dx, dy))
    });
    solve_dlt(&pairs)
}

//! Score map → geometric primitives: thresholding, Zhang–Suen thinning,
//! Hough line voting and 8-connected blob centroids.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, Point2, ScoreMap};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_THETA_BINS: usize = 180;
pub const DEFAULT_RHO_RESOLUTION: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocError {
    #[error("hough voting needs at least 2 set pixels, got {0}")]
    InsufficientPixels(usize),
    #[error("invalid hough parameters: {0}")]
    InvalidParameters(&'static str),
}

/// The line `x cos θ + y sin θ = ρ`, θ in `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughLine {
    pub rho: f64,
    pub theta: f64,
}

impl HoughLine {
    /// Unit normal `(cos θ, sin θ)`.
    pub fn normal(&self) -> Point2 {
        Point2::new(self.theta.cos(), self.theta.sin())
    }

    /// Unit direction along the line, `(-sin θ, cos θ)`.
    pub fn direction(&self) -> Point2 {
        Point2::new(-self.theta.sin(), self.theta.cos())
    }

    /// Orthogonal projection of `p` onto the line.
    pub fn foot_of(&self, p: Point2) -> Point2 {
        let n = self.normal();
        let off = p.x * n.x + p.y * n.y - self.rho;
        p - n * off
    }
}

/// 8-connected region of set pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub centroid: Point2,
    pub area: usize,
    /// First member in row-major order.
    pub first: (usize, usize),
    /// `(min_x, min_y, max_x, max_y)`.
    pub bbox: (usize, usize, usize, usize),
}

/// Sets every pixel whose score is `>= tau`.
pub fn binarize(m: &ScoreMap, tau: f64) -> BinaryMask {
    let bits = m.values().iter().map(|&v| v >= tau).collect();
    BinaryMask::new(m.width(), m.height(), bits).expect("dimensions preserved")
}

/// Neighbors P2..P9, clockwise from north.
const RING: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

fn neighborhood(m: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let (x, y) = (x as isize, y as isize);
    RING.map(|(dx, dy)| m.get_signed(x + dx, y + dy))
}

/// Zhang–Suen thinning to a one-pixel-wide skeleton.
///
/// Both sub-iterations run until a full pass removes nothing, so the result is
/// a fixed point. The classic scheme deletes every pixel of a 2×2 square or a
/// two-pixel diagonal bar in a single step, and wears 45° strokes down to a
/// stub. A pixel therefore needs at least three neighbors to be deleted, which
/// keeps diagonal strokes as a staircase along their centerline; a component
/// that would still vanish keeps its first pixel in row-major order.
pub fn thin(m: &BinaryMask) -> BinaryMask {
    let mut cur = m.clone();
    loop {
        let removed_a = thin_step(&mut cur, true);
        let removed_b = thin_step(&mut cur, false);
        if !removed_a && !removed_b {
            return cur;
        }
    }
}

fn removable(n: &[bool; 8]) -> bool {
    let b = n.iter().filter(|&&v| v).count();
    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
    (3..=6).contains(&b) && a == 1
}

fn thin_step(m: &mut BinaryMask, first: bool) -> bool {
    let mut doomed = Vec::new();
    for (x, y) in m.iter_set() {
        let n = neighborhood(m, x, y);
        if !removable(&n) {
            continue;
        }
        // n[0]=P2 (N), n[2]=P4 (E), n[4]=P6 (S), n[6]=P8 (W)
        let (c1, c2) = if first {
            (n[0] && n[2] && n[4], n[2] && n[4] && n[6])
        } else {
            (n[0] && n[2] && n[6], n[0] && n[4] && n[6])
        };
        if !c1 && !c2 {
            doomed.push((x, y));
        }
    }
    if doomed.is_empty() {
        return false;
    }

    let mut marked = BinaryMask::empty(m.width(), m.height());
    for &(x, y) in &doomed {
        marked.set(x, y, true);
    }
    let labels = label_components(m);
    let mut survivors = vec![false; labels.count];
    for (x, y) in m.iter_set() {
        if !marked.get(x, y) {
            survivors[labels.at(x, y)] = true;
        }
    }
    let mut kept = vec![false; labels.count];
    let mut removed = false;
    for (x, y) in m.iter_set().collect::<Vec<_>>() {
        if !marked.get(x, y) {
            continue;
        }
        let l = labels.at(x, y);
        if !survivors[l] && !kept[l] {
            kept[l] = true;
            continue;
        }
        m.set(x, y, false);
        removed = true;
    }
    removed
}

struct Labels {
    width: usize,
    ids: Vec<usize>,
    count: usize,
}

impl Labels {
    fn at(&self, x: usize, y: usize) -> usize {
        self.ids[y * self.width + x]
    }
}

const UNLABELED: usize = usize::MAX;

/// 8-connected labelling; labels are numbered in row-major order of first pixel.
fn label_components(m: &BinaryMask) -> Labels {
    let w = m.width();
    let mut ids = vec![UNLABELED; w * m.height()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for (sx, sy) in m.iter_set() {
        if ids[sy * w + sx] != UNLABELED {
            continue;
        }
        ids[sy * w + sx] = count;
        queue.push_back((sx, sy));
        while let Some((x, y)) = queue.pop_front() {
            for (dx, dy) in RING {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if m.get_signed(nx, ny) {
                    let idx = ny as usize * w + nx as usize;
                    if ids[idx] == UNLABELED {
                        ids[idx] = count;
                        queue.push_back((nx as usize, ny as usize));
                    }
                }
            }
        }
        count += 1;
    }
    Labels {
        width: w,
        ids,
        count,
    }
}

/// Number of 8-connected components.
pub fn component_count(m: &BinaryMask) -> usize {
    label_components(m).count
}

/// Strongest straight line by (ρ, θ) voting.
///
/// θ takes `theta_bins` values `kπ/theta_bins`; ρ bins are spaced by
/// `rho_resolution` with ρ = 0 on a bin center. Each pixel's vote is split
/// linearly between the two ρ bins bracketing its exact ρ. Ties go to the
/// smaller θ, then the smaller ρ.
pub fn hough_line(
    m: &BinaryMask,
    theta_bins: usize,
    rho_resolution: f64,
) -> Result<HoughLine, PostprocError> {
    if theta_bins == 0 {
        return Err(PostprocError::InvalidParameters(
            "theta_bins must be positive",
        ));
    }
    if !(rho_resolution > 0.0 && rho_resolution.is_finite()) {
        return Err(PostprocError::InvalidParameters(
            "rho_resolution must be positive",
        ));
    }
    let points: Vec<(usize, usize)> = m.iter_set().collect();
    if points.len() < 2 {
        return Err(PostprocError::InsufficientPixels(points.len()));
    }

    let diag = ((m.width() as f64).powi(2) + (m.height() as f64).powi(2)).sqrt();
    let half = (diag / rho_resolution).ceil() as usize + 1;
    let rho_bins = 2 * half + 1;
    let trig: Vec<(f64, f64)> = (0..theta_bins)
        .map(|k| (k as f64 * PI / theta_bins as f64).sin_cos())
        .collect();

    let mut acc = vec![0.0f64; theta_bins * rho_bins];
    for (k, &(s, c)) in trig.iter().enumerate() {
        let row = &mut acc[k * rho_bins..(k + 1) * rho_bins];
        for &(x, y) in &points {
            let pos = (x as f64 * c + y as f64 * s) / rho_resolution + half as f64;
            let i0 = pos.floor();
            let f = pos - i0;
            let i0 = i0 as usize;
            row[i0] += 1.0 - f;
            if f > 0.0 {
                row[i0 + 1] += f;
            }
        }
    }

    // strict > keeps the first (smallest θ, then smallest ρ) maximum
    let mut best = (0usize, 0usize);
    let mut best_votes = f64::NEG_INFINITY;
    for k in 0..theta_bins {
        for r in 0..rho_bins {
            let v = acc[k * rho_bins + r];
            if v > best_votes {
                best_votes = v;
                best = (k, r);
            }
        }
    }
    Ok(HoughLine {
        rho: (best.1 as f64 - half as f64) * rho_resolution,
        theta: best.0 as f64 * PI / theta_bins as f64,
    })
}

/// 8-connected components with their mean pixel position, sorted by
/// descending area, then by first pixel in row-major order.
pub fn blobs(m: &BinaryMask) -> Vec<Blob> {
    let labels = label_components(m);
    let mut out: Vec<Option<Blob>> = vec![None; labels.count];
    let mut sums = vec![(0usize, 0usize); labels.count];
    for (x, y) in m.iter_set() {
        let l = labels.at(x, y);
        sums[l].0 += x;
        sums[l].1 += y;
        let blob = out[l].get_or_insert(Blob {
            centroid: Point2::default(),
            area: 0,
            first: (x, y),
            bbox: (x, y, x, y),
        });
        blob.area += 1;
        let b = &mut blob.bbox;
        *b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
    }
    let mut out: Vec<Blob> = out
        .into_iter()
        .zip(sums)
        .map(|(blob, (sx, sy))| {
            let mut blob = blob.expect("every label has a pixel");
            let n = blob.area as f64;
            blob.centroid = Point2::new(sx as f64 / n, sy as f64 / n);
            blob
        })
        .collect();
    out.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then((a.first.1, a.first.0).cmp(&(b.first.1, b.first.0)))
    });
    out
}

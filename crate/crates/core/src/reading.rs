//! The angle method: pointer sweep over key-scale sweep, times the key number.
//!
//! Angles live in the y-down pixel frame. A clockwise sweep (as seen on screen)
//! increases `atan2(dy, dx)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Point2, ScoreMap};
use crate::postproc::{
    binarize, blobs, hough_line, thin, HoughLine, PostprocError, DEFAULT_RHO_RESOLUTION,
    DEFAULT_THETA_BINS, DEFAULT_THRESHOLD,
};

/// Endpoints closer than this to the center have no direction.
const RAY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadingError {
    #[error("ray endpoint coincides with the dial center")]
    DegenerateRay,
    #[error("key-scale sweep must be positive, got {0}")]
    ZeroSpan(f64),
    #[error("pointer sweep must be a finite non-negative angle, got {0}")]
    InvalidAngle(f64),
    #[error("pointer map has {0} set pixels after thresholding, need at least 2")]
    EmptyPointer(usize),
    #[error("key-scale map has {0} blobs, need 2 (zero and key scale)")]
    InsufficientScales(usize),
    #[error("key-scale map has {0} blobs; only a zero and a single key scale are supported")]
    AmbiguousScales(usize),
    #[error(transparent)]
    Hough(#[from] PostprocError),
}

/// Rotation center and sweep direction of a dial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialFrame {
    pub center: Point2,
    /// Sweep direction from the zero scale toward the key scale.
    pub clockwise: bool,
    /// Approximate zero-scale position, when an annotation supplies one. The
    /// blob closest to it is taken as the zero scale.
    #[serde(default)]
    pub zero_hint: Option<Point2>,
}

impl DialFrame {
    pub fn new(center: Point2, clockwise: bool) -> Self {
        Self {
            center,
            clockwise,
            zero_hint: None,
        }
    }

    pub fn with_zero_hint(mut self, hint: Point2) -> Self {
        self.zero_hint = Some(hint);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingResult {
    pub value: f64,
    /// Sweep from the zero scale to the pointer, degrees in `[0, 360)`.
    pub alpha1: f64,
    /// Sweep from the zero scale to the key scale, degrees in `(0, 360)`.
    pub alpha2: f64,
    pub num_rec: f64,
    pub pointer: HoughLine,
    pub zero_scale: Point2,
    pub key_scale: Point2,
}

/// Post-processing knobs for [`read_meter_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadOptions {
    pub threshold: f64,
    pub theta_bins: usize,
    pub rho_resolution: f64,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            theta_bins: DEFAULT_THETA_BINS,
            rho_resolution: DEFAULT_RHO_RESOLUTION,
        }
    }
}

fn ray_angle(center: Point2, p: Point2) -> Result<f64, ReadingError> {
    let (dx, dy) = (p.x - center.x, p.y - center.y);
    if dx.hypot(dy) <= RAY_EPS {
        return Err(ReadingError::DegenerateRay);
    }
    Ok(dy.atan2(dx).to_degrees())
}

fn wrap_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Angle swept from ray `center→from` to ray `center→to`, degrees in `[0, 360)`.
pub fn sweep_angle(
    center: Point2,
    from: Point2,
    to: Point2,
    clockwise: bool,
) -> Result<f64, ReadingError> {
    let a_from = ray_angle(center, from)?;
    let a_to = ray_angle(center, to)?;
    let delta = if clockwise {
        a_to - a_from
    } else {
        a_from - a_to
    };
    Ok(wrap_degrees(delta))
}

/// `alpha1 / alpha2 × num_rec`.
pub fn compute_reading(alpha1: f64, alpha2: f64, num_rec: f64) -> Result<f64, ReadingError> {
    if !(alpha2 > 0.0) || !alpha2.is_finite() {
        return Err(ReadingError::ZeroSpan(alpha2));
    }
    if !(alpha1 >= 0.0) || !alpha1.is_finite() {
        return Err(ReadingError::InvalidAngle(alpha1));
    }
    Ok(alpha1 / alpha2 * num_rec)
}

/// Full inference chain with default thresholds and Hough resolution.
pub fn read_meter(
    pointer_map: &ScoreMap,
    key_scale_map: &ScoreMap,
    num_rec: f64,
    frame: &DialFrame,
) -> Result<ReadingResult, ReadingError> {
    read_meter_with(
        pointer_map,
        key_scale_map,
        num_rec,
        frame,
        &ReadOptions::default(),
    )
}

/// Threshold both maps, thin the pointer and fit its line, locate the two
/// scale centroids, then apply the angle method.
///
/// The Hough line is undirected; the pointer points along whichever half-line
/// (split at the foot of the dial center) holds more pointer pixels. A pointer
/// lying in the dead zone closer to the zero scale than to the key scale reads
/// as zero.
pub fn read_meter_with(
    pointer_map: &ScoreMap,
    key_scale_map: &ScoreMap,
    num_rec: f64,
    frame: &DialFrame,
    opts: &ReadOptions,
) -> Result<ReadingResult, ReadingError> {
    let pointer_mask = binarize(pointer_map, opts.threshold);
    let n_pointer = pointer_mask.count();
    if n_pointer < 2 {
        return Err(ReadingError::EmptyPointer(n_pointer));
    }
    let skeleton = thin(&pointer_mask);
    let pointer = hough_line(&skeleton, opts.theta_bins, opts.rho_resolution)?;

    let scales = blobs(&binarize(key_scale_map, opts.threshold));
    match scales.len() {
        0 | 1 => return Err(ReadingError::InsufficientScales(scales.len())),
        2 => {}
        n => return Err(ReadingError::AmbiguousScales(n)),
    }
    let (a, b) = (scales[0].centroid, scales[1].centroid);
    let a_is_zero = match frame.zero_hint {
        Some(hint) => a.distance(hint) <= b.distance(hint),
        None => {
            let ab = sweep_angle(frame.center, a, b, frame.clockwise)?;
            let ba = sweep_angle(frame.center, b, a, frame.clockwise)?;
            ab <= ba
        }
    };
    let (zero_scale, key_scale) = if a_is_zero { (a, b) } else { (b, a) };

    let anchor = pointer.foot_of(frame.center);
    let dir = pointer.direction();
    let (mut ahead, mut behind) = (0usize, 0usize);
    let (mut reach_ahead, mut reach_behind) = (0.0f64, 0.0f64);
    for (x, y) in pointer_mask.iter_set() {
        let t = (x as f64 - anchor.x) * dir.x + (y as f64 - anchor.y) * dir.y;
        if t > 0.0 {
            ahead += 1;
            reach_ahead = reach_ahead.max(t);
        } else if t < 0.0 {
            behind += 1;
            reach_behind = reach_behind.max(-t);
        }
    }
    let tip = if ahead >= behind {
        anchor + dir * reach_ahead
    } else {
        anchor - dir * reach_behind
    };

    let alpha2 = sweep_angle(frame.center, zero_scale, key_scale, frame.clockwise)?;
    let mut alpha1 = sweep_angle(frame.center, zero_scale, tip, frame.clockwise)?;
    if alpha1 > alpha2 && 360.0 - alpha1 < alpha1 - alpha2 {
        alpha1 = 0.0;
    }
    let value = compute_reading(alpha1, alpha2, num_rec)?;
    Ok(ReadingResult {
        value,
        alpha1,
        alpha2,
        num_rec,
        pointer,
        zero_scale,
        key_scale,
    })
}

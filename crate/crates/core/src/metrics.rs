//! Reading-accuracy indicators and mask overlap.
//!
//! The two error averages are evaluated in decimal arithmetic on the shortest
//! round-trip representation of each input, so hand-entered readings such as
//! `1.1` against `1.0` give exactly 10 %. Values outside the decimal range fall
//! back to binary floating point.

use rust_decimal::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::BinaryMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no records to evaluate")]
    Empty,
    #[error("record {0} has zero ground truth")]
    ZeroGroundTruth(usize),
    #[error("record {0} has non-positive range")]
    NonPositiveRange(usize),
    #[error("record {0} has non-finite fields")]
    NonFinite(usize),
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
}

/// One predicted reading against its ground truth and meter range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub predicted: f64,
    pub ground_truth: f64,
    pub range: f64,
}

/// Aggregate written by the `eval` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rel_percent: f64,
    pub ref_percent: f64,
    pub n: usize,
}

fn to_decimal(v: f64) -> Option<Decimal> {
    Decimal::from_str(&v.to_string()).ok()
}

/// `mean(|p − d| / q) × 100`, decimal first, float fallback.
fn mean_ratio_percent(terms: &[(f64, f64, f64)]) -> f64 {
    let exact = || -> Option<f64> {
        let mut sum = Decimal::ZERO;
        for &(p, g, q) in terms {
            let diff = to_decimal(p)?.checked_sub(to_decimal(g)?)?.abs();
            sum = sum.checked_add(diff.checked_div(to_decimal(q)?)?)?;
        }
        let n = Decimal::from(terms.len());
        sum.checked_div(n)?
            .checked_mul(Decimal::ONE_HUNDRED)?
            .to_f64()
    };
    exact().unwrap_or_else(|| {
        let sum: f64 = terms.iter().map(|&(p, g, q)| (p - g).abs() / q).sum();
        sum / terms.len() as f64 * 100.0
    })
}

fn check_finite(records: &[EvalRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    match records.iter().position(|r| {
        !(r.predicted.is_finite() && r.ground_truth.is_finite() && r.range.is_finite())
    }) {
        Some(i) => Err(MetricsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Average relative error in percent: `mean(|p − g| / |g|) × 100`.
pub fn avg_relative_error(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    check_finite(records)?;
    if let Some(i) = records.iter().position(|r| r.ground_truth == 0.0) {
        return Err(MetricsError::ZeroGroundTruth(i));
    }
    let terms: Vec<_> = records
        .iter()
        .map(|r| (r.predicted, r.ground_truth, r.ground_truth.abs()))
        .collect();
    Ok(mean_ratio_percent(&terms))
}

/// Average reference error in percent: `mean(|p − g| / R) × 100`.
pub fn avg_reference_error(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    check_finite(records)?;
    if let Some(i) = records.iter().position(|r| !(r.range > 0.0)) {
        return Err(MetricsError::NonPositiveRange(i));
    }
    let terms: Vec<_> = records
        .iter()
        .map(|r| (r.predicted, r.ground_truth, r.range))
        .collect();
    Ok(mean_ratio_percent(&terms))
}

pub fn summarize(records: &[EvalRecord]) -> Result<EvalSummary, MetricsError> {
    Ok(EvalSummary {
        rel_percent: avg_relative_error(records)?,
        ref_percent: avg_reference_error(records)?,
        n: records.len(),
    })
}

/// `|a ∩ b| / |a ∪ b|`, 1 when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::DimensionMismatch(
            (a.width(), a.height()),
            (b.width(), b.height()),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

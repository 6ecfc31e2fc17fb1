//! Training objectives as scalar functions with analytic gradients.
//!
//! Every loss returns a [`LossValue`] whose `grad` is laid out like the
//! prediction it differentiates. Combined losses concatenate the gradient
//! blocks of their inputs in argument order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::QuadOffsets;
use crate::image::{BinaryMask, ScoreMap};

/// Pointer-map weight of the component loss.
pub const DEFAULT_LAMBDA: f64 = 0.4;
/// Hard negatives kept per positive pixel.
pub const DEFAULT_NEG_RATIO: usize = 3;
/// Added to the dice denominator.
pub const DICE_EPS: f64 = 1e-6;
/// Predictions are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("prediction has {pred} elements but target has {target}")]
    DimensionMismatch { pred: usize, target: usize },
    #[error("lambda must lie in (0, 1), got {0}")]
    LambdaOutOfRange(f64),
    #[error("negative ratio must be at least 1")]
    InvalidRatio,
    #[error("selection index {0} out of range")]
    InvalidSelection(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    fn scaled(&self, s: f64) -> impl Iterator<Item = f64> + '_ {
        self.grad.iter().map(move |g| g * s)
    }
}

/// Sum of squared corner-offset errors (a sum over all eight components, not a mean).
pub fn mse_offsets(pred: &QuadOffsets, gt: &QuadOffsets) -> LossValue {
    let diff: Vec<f64> = pred
        .to_vec()
        .iter()
        .zip(gt.to_vec())
        .map(|(p, g)| p - g)
        .collect();
    LossValue {
        value: diff.iter().map(|d| d * d).sum(),
        grad: diff.iter().map(|d| 2.0 * d).collect(),
    }
}

fn check_dims(pred: &ScoreMap, w: usize, h: usize) -> Result<(), LossError> {
    if pred.width() != w || pred.height() != h {
        return Err(LossError::DimensionMismatch {
            pred: pred.values().len(),
            target: w * h,
        });
    }
    Ok(())
}

/// `1 − 2ΣPG / (ΣP² + ΣG² + ε)`, differentiated with respect to `P`.
///
/// With both maps empty the value is 1.
pub fn dice_loss(p: &ScoreMap, g: &ScoreMap) -> Result<LossValue, LossError> {
    check_dims(p, g.width(), g.height())?;
    let (p, g) = (p.values(), g.values());
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let denom =
        p.iter().map(|a| a * a).sum::<f64>() + g.iter().map(|b| b * b).sum::<f64>() + DICE_EPS;
    let value = 1.0 - 2.0 * inter / denom;
    let grad = p
        .iter()
        .zip(g)
        .map(|(&pi, &gi)| -2.0 * (gi * denom - 2.0 * pi * inter) / (denom * denom))
        .collect();
    Ok(LossValue { value, grad })
}

/// `λ·L_pointer + (1−λ)·L_keyscale`; gradient is `[λ·∇pointer, (1−λ)·∇keyscale]`.
pub fn component_loss(
    l_pm: &LossValue,
    l_ksm: &LossValue,
    lambda: f64,
) -> Result<LossValue, LossError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(LossError::LambdaOutOfRange(lambda));
    }
    Ok(LossValue {
        value: lambda * l_pm.value + (1.0 - lambda) * l_ksm.value,
        grad: l_pm
            .scaled(lambda)
            .chain(l_ksm.scaled(1.0 - lambda))
            .collect(),
    })
}

/// Pixel indices used by [`ohem_bce`]: all positives plus the
/// `neg_ratio × #positives` highest-scoring negatives (ties to the lower index).
/// Without positives, the `max(1, n/100)` hardest negatives. Sorted ascending.
pub fn ohem_selection(
    pred: &ScoreMap,
    gt: &BinaryMask,
    neg_ratio: usize,
) -> Result<Vec<usize>, LossError> {
    check_dims(pred, gt.width(), gt.height())?;
    if neg_ratio == 0 {
        return Err(LossError::InvalidRatio);
    }
    let bits = gt.bits();
    let mut selected: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
    let mut negatives: Vec<usize> = (0..bits.len()).filter(|&i| !bits[i]).collect();
    let quota = if selected.is_empty() {
        (bits.len() / 100).max(1)
    } else {
        neg_ratio.saturating_mul(selected.len())
    };
    let scores = pred.values();
    negatives.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    selected.extend(negatives.into_iter().take(quota));
    selected.sort_unstable();
    Ok(selected)
}

/// Mean binary cross-entropy over a fixed pixel selection; the gradient is zero
/// outside the selection and wherever the clamp is active.
pub fn bce_on_selection(
    pred: &ScoreMap,
    gt: &BinaryMask,
    selection: &[usize],
) -> Result<LossValue, LossError> {
    check_dims(pred, gt.width(), gt.height())?;
    let (p, y) = (pred.values(), gt.bits());
    let mut grad = vec![0.0; p.len()];
    if selection.is_empty() {
        return Ok(LossValue { value: 0.0, grad });
    }
    let n = selection.len() as f64;
    let mut total = 0.0;
    for &i in selection {
        if i >= p.len() {
            return Err(LossError::InvalidSelection(i));
        }
        let raw = p[i];
        let q = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let clamped = q != raw;
        if y[i] {
            total -= q.ln();
            if !clamped {
                grad[i] = -1.0 / (q * n);
            }
        } else {
            total -= (1.0 - q).ln();
            if !clamped {
                grad[i] = 1.0 / ((1.0 - q) * n);
            }
        }
    }
    Ok(LossValue {
        value: total / n,
        grad,
    })
}

/// Cross-entropy restricted to online-hard-example-mined pixels.
pub fn ohem_bce(
    pred: &ScoreMap,
    gt: &BinaryMask,
    neg_ratio: usize,
) -> Result<LossValue, LossError> {
    let sel = ohem_selection(pred, gt, neg_ratio)?;
    bce_on_selection(pred, gt, &sel)
}

/// Unweighted sum of the three branch losses; gradients concatenated.
pub fn total_loss(l_com: &LossValue, l_num_det: &LossValue, l_num_reco: &LossValue) -> LossValue {
    LossValue {
        value: l_com.value + l_num_det.value + l_num_reco.value,
        grad: l_com
            .grad
            .iter()
            .chain(&l_num_det.grad)
            .chain(&l_num_reco.grad)
            .copied()
            .collect(),
    }
}

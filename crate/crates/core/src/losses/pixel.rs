//! Per-pixel classification losses on logits.

use super::{check_binary, check_len, LossValue};
use crate::error::{Error, Result};

/// `log(σ(u))` without overflow for large `|u|`.
pub(crate) fn log_sigmoid(u: f64) -> f64 {
    -(f64::max(-u, 0.0) + (-u.abs()).exp().ln_1p())
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Summed binary focal loss `−α (1 − p_t)^γ log p_t` with `p_t = σ(±logit)`.
///
/// The gradient is taken with respect to the logits.
pub fn focal_loss(logits: &[f64], target: &[u8], alpha: f64, gamma: f64) -> Result<LossValue> {
    check_len(logits, target)?;
    check_binary(target)?;
    if alpha <= 0.0 || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "focal loss needs alpha > 0 and gamma >= 0, got alpha={alpha}, gamma={gamma}"
        )));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(target) {
        let s = if y == 1 { 1.0 } else { -1.0 };
        let u = s * z;
        let log_pt = log_sigmoid(u);
        let pt = sigmoid(u);
        let q = sigmoid(-u);
        let q_gamma = q.powf(gamma);
        value += -alpha * q_gamma * log_pt;
        // d/du of −α q^γ log p_t, using dq/du = −q p_t and d(log p_t)/du = q.
        let du = alpha * (gamma * q_gamma * pt * log_pt - q_gamma * q);
        grad.push(s * du);
    }
    Ok(LossValue { value, grad })
}

/// Foreground/background weights for the cross-entropy baseline.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassWeights {
    pub foreground: f64,
    pub background: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            foreground: 1.0,
            background: 1.0,
        }
    }
}

impl ClassWeights {
    /// Median-frequency balancing from class frequencies (any common unit).
    pub fn from_frequencies(foreground: f64, background: f64) -> Result<Self> {
        if foreground <= 0.0 || background <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "class frequencies must be positive, got ({foreground}, {background})"
            )));
        }
        // The median of two values is their mean.
        let median = 0.5 * (foreground + background);
        Ok(Self {
            foreground: median / foreground,
            background: median / background,
        })
    }

    /// Median-frequency balancing over a set of binary masks.
    ///
    /// A class's frequency is its pixel count divided by the total pixel count
    /// of the masks in which the class appears.
    pub fn median_frequency<'a>(masks: impl IntoIterator<Item = &'a [u8]>) -> Result<Self> {
        let (mut fg, mut fg_total, mut bg, mut bg_total) = (0u64, 0u64, 0u64, 0u64);
        for m in masks {
            check_binary(m)?;
            let ones = m.iter().filter(|&&v| v == 1).count() as u64;
            let zeros = m.len() as u64 - ones;
            if ones > 0 {
                fg += ones;
                fg_total += m.len() as u64;
            }
            if zeros > 0 {
                bg += zeros;
                bg_total += m.len() as u64;
            }
        }
        if fg_total == 0 || bg_total == 0 {
            return Err(Error::Data(
                "median-frequency balancing needs both classes present in the training masks".into(),
            ));
        }
        Self::from_frequencies(fg as f64 / fg_total as f64, bg as f64 / bg_total as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.foreground <= 0.0 || self.background <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "class weights must be positive, got ({}, {})",
                self.foreground, self.background
            )));
        }
        Ok(())
    }
}

/// Summed class-weighted binary cross-entropy on logits.
pub fn weighted_bce_loss(logits: &[f64], target: &[u8], weights: ClassWeights) -> Result<LossValue> {
    check_len(logits, target)?;
    check_binary(target)?;
    weights.validate()?;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(target) {
        let (s, w) = if y == 1 {
            (1.0, weights.foreground)
        } else {
            (-1.0, weights.background)
        };
        let u = s * z;
        value += -w * log_sigmoid(u);
        grad.push(-w * s * sigmoid(-u));
    }
    Ok(LossValue { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_single_pixel_hand_value() {
        // p = 0.9 on a crack pixel: 0.01 * -ln(0.9).
        let z = (0.9f64 / 0.1).ln();
        let l = focal_loss(&[z], &[1], 1.0, 2.0).unwrap();
        assert!((l.value - 0.001_053_605_156_578_263).abs() < 1e-12, "{}", l.value);
    }

    #[test]
    fn focal_is_stable_for_extreme_logits() {
        let l = focal_loss(&[100.0, -100.0, 100.0, -100.0], &[1, 0, 0, 1], 1.0, 2.0).unwrap();
        assert!(l.value.is_finite());
        assert!((l.value - 200.0).abs() < 1e-9);
        assert!(l.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn focal_decreases_along_confidence_path() {
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let z = -2.0 + 0.5 * k as f64;
            let v = focal_loss(&[z], &[1], 1.0, 2.0).unwrap().value;
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn rejects_non_binary_targets_and_length_mismatch() {
        assert!(focal_loss(&[0.0], &[2], 1.0, 2.0).is_err());
        assert!(focal_loss(&[0.0, 1.0], &[1], 1.0, 2.0).is_err());
        assert!(weighted_bce_loss(&[0.0], &[1], ClassWeights { foreground: 0.0, background: 1.0 }).is_err());
    }

    #[test]
    fn median_frequency_weights_for_published_imbalance() {
        let w = ClassWeights::from_frequencies(4.68, 95.31).unwrap();
        let median = (4.68 + 95.31) / 2.0;
        assert!((w.foreground - median / 4.68).abs() < 1e-12);
        assert!((w.background - median / 95.31).abs() < 1e-12);
    }

    #[test]
    fn median_frequency_counts_only_masks_containing_the_class() {
        let a = [1u8, 0, 0, 0];
        let b = [0u8, 0, 0, 0];
        let w = ClassWeights::median_frequency([&a[..], &b[..]]).unwrap();
        // fg freq = 1/4 (only mask a), bg freq = 7/8.
        let expect = ClassWeights::from_frequencies(0.25, 0.875).unwrap();
        assert_eq!(w, expect);
    }

    #[test]
    fn bce_is_linear_in_weights() {
        let z = [0.3, -1.2, 2.0];
        let y = [1u8, 0, 1];
        let one = weighted_bce_loss(&z, &y, ClassWeights::default()).unwrap().value;
        let two = weighted_bce_loss(&z, &y, ClassWeights { foreground: 2.0, background: 2.0 })
            .unwrap()
            .value;
        assert!((two - 2.0 * one).abs() < 1e-12);
    }
}

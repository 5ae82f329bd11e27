//! Overlap surrogates: Soft-IoU on probabilities and the Lovász hinge on logits.

use super::pixel::sigmoid;
use super::{check_binary, check_len, LossValue};
use crate::error::Result;

/// Denominator guard for empty foreground crops.
pub const SOFT_IOU_EPS: f64 = 1e-7;

/// `1 − Σpy / (Σp + Σy − Σpy + ε)` for one probability map; gradient w.r.t. `p`.
///
/// `ε` is added only when the target has no foreground, where the union can
/// vanish; otherwise the union is at least `Σy ≥ 1`.
pub fn soft_iou_loss(probs: &[f64], target: &[u8]) -> Result<LossValue> {
    check_len(probs, target)?;
    check_binary(target)?;
    let (mut inter, mut sum_p, mut sum_y) = (0.0, 0.0, 0.0);
    for (&p, &y) in probs.iter().zip(target) {
        let y = y as f64;
        inter += p * y;
        sum_p += p;
        sum_y += y;
    }
    let eps = if sum_y == 0.0 { SOFT_IOU_EPS } else { 0.0 };
    let union = sum_p + sum_y - inter + eps;
    let value = 1.0 - inter / union;
    let u2 = union * union;
    let grad = target
        .iter()
        .map(|&y| {
            let y = y as f64;
            -(y * union - inter * (1.0 - y)) / u2
        })
        .collect();
    Ok(LossValue { value, grad })
}

/// Soft-IoU with `p = σ(logit)`; gradient w.r.t. the logits.
pub fn soft_iou_loss_logits(logits: &[f64], target: &[u8]) -> Result<LossValue> {
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut l = soft_iou_loss(&probs, target)?;
    for (g, p) in l.grad.iter_mut().zip(&probs) {
        *g *= p * (1.0 - p);
    }
    Ok(l)
}

/// Lovász hinge for one binary map: the Lovász extension of the Jaccard
/// loss evaluated on the sorted hinge errors `1 − z·(2y − 1)`.
pub fn lovasz_hinge_loss(logits: &[f64], target: &[u8]) -> Result<LossValue> {
    check_len(logits, target)?;
    check_binary(target)?;
    let n = logits.len();
    if n == 0 {
        return Ok(LossValue { value: 0.0, grad: Vec::new() });
    }
    let errors: Vec<f64> = logits
        .iter()
        .zip(target)
        .map(|(&z, &y)| 1.0 - z * (2.0 * y as f64 - 1.0))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));

    let gts: f64 = target.iter().map(|&y| y as f64).sum();
    let mut jaccard = Vec::with_capacity(n);
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    for &i in &order {
        let y = target[i] as f64;
        cum_fg += y;
        cum_bg += 1.0 - y;
        let intersection = gts - cum_fg;
        let union = gts + cum_bg;
        jaccard.push(1.0 - intersection / union);
    }
    for k in (1..n).rev() {
        jaccard[k] -= jaccard[k - 1];
    }

    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        if errors[i] > 0.0 {
            value += errors[i] * jaccard[rank];
            grad[i] = -(2.0 * target[i] as f64 - 1.0) * jaccard[rank];
        }
    }
    Ok(LossValue { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_iou_two_pixel_example() {
        let l = soft_iou_loss(&[0.5, 0.5], &[1, 0]).unwrap();
        // intersection 0.5, union 1.5
        assert!((l.value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn soft_iou_exact_match_is_near_zero() {
        let l = soft_iou_loss(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap();
        assert!(l.value.abs() < 1e-7);
    }

    #[test]
    fn soft_iou_empty_ground_truth_is_one() {
        let l = soft_iou_loss(&[0.2, 0.7, 0.1], &[0, 0, 0]).unwrap();
        assert_eq!(l.value, 1.0);
        let l = soft_iou_loss(&[0.0, 0.0], &[0, 0]).unwrap();
        assert_eq!(l.value, 1.0);
    }

    #[test]
    fn lovasz_single_pixel_is_hinge() {
        for m in [-2.0, 0.0, 0.5, 1.0, 3.0] {
            let l = lovasz_hinge_loss(&[m], &[1]).unwrap();
            assert!((l.value - f64::max(0.0, 1.0 - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn lovasz_vanishes_with_large_margins() {
        let l = lovasz_hinge_loss(&[5.0, -5.0, 7.0, -3.0], &[1, 0, 1, 0]).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn lovasz_is_permutation_invariant() {
        let z = [0.3, -1.2, 2.0, 0.1, -0.4];
        let y = [1u8, 0, 1, 0, 1];
        let a = lovasz_hinge_loss(&z, &y).unwrap().value;
        let perm = [3, 0, 4, 2, 1];
        let zp: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
        let yp: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
        let b = lovasz_hinge_loss(&zp, &yp).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }
}

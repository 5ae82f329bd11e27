use proptest::prelude::*;

use scnet::losses::{
    focal_loss, lovasz_hinge_loss, soft_iou_loss, soft_iou_loss_logits, total_loss_maps, weighted_bce_loss,
    ClassWeights, LossCombo, LossConfig, LossValue, Reduction,
};

fn logits_and_target(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (1..=max).prop_flat_map(|n| (prop::collection::vec(-6.0..6.0f64, n), prop::collection::vec(0u8..=1, n)))
}

fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    (up - f(&p)) / (2.0 * h)
}

fn assert_gradient(loss: &dyn Fn(&[f64]) -> LossValue, x: &[f64]) -> Result<(), TestCaseError> {
    let g = loss(x).grad;
    let value = |z: &[f64]| loss(z).value;
    for i in 0..x.len() {
        let n = central_difference(&value, x, i, 1e-6);
        let scale = g[i].abs().max(n.abs()).max(1e-2);
        prop_assert!((g[i] - n).abs() / scale < 1e-4, "coordinate {i}: analytic {} numeric {n}", g[i]);
    }
    Ok(())
}

proptest! {
    #[test]
    fn focal_gradient_matches_differences((z, y) in logits_and_target(24), gamma in 0.0..3.0f64, alpha in 0.25..2.0f64) {
        assert_gradient(&|z| focal_loss(z, &y, alpha, gamma).unwrap(), &z)?;
    }

    #[test]
    fn weighted_bce_gradient_matches_differences((z, y) in logits_and_target(24), fg in 0.1..10.0f64, bg in 0.1..2.0f64) {
        let w = ClassWeights { foreground: fg, background: bg };
        assert_gradient(&|z| weighted_bce_loss(z, &y, w).unwrap(), &z)?;
    }

    #[test]
    fn soft_iou_gradient_matches_differences((z, y) in logits_and_target(24)) {
        assert_gradient(&|z| soft_iou_loss_logits(z, &y).unwrap(), &z)?;
    }

    #[test]
    fn losses_are_non_negative_and_bounded((z, y) in logits_and_target(40)) {
        prop_assert!(focal_loss(&z, &y, 1.0, 2.0).unwrap().value >= 0.0);
        let iou = soft_iou_loss_logits(&z, &y).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&iou));
        prop_assert!(lovasz_hinge_loss(&z, &y).unwrap().value >= 0.0);
    }

    #[test]
    fn focal_never_exceeds_cross_entropy((z, y) in logits_and_target(40), gamma in 0.0..4.0f64) {
        let ce = weighted_bce_loss(&z, &y, ClassWeights { foreground: 1.0, background: 1.0 }).unwrap().value;
        prop_assert!(focal_loss(&z, &y, 1.0, gamma).unwrap().value <= ce + 1e-12);
    }

    #[test]
    fn soft_iou_is_zero_only_for_a_perfect_binary_match(y in prop::collection::vec(0u8..=1, 1..30)) {
        prop_assume!(y.contains(&1));
        let p: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        prop_assert!(soft_iou_loss(&p, &y).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn mean_reduction_is_the_scaled_sum((z, y) in logits_and_target(16), maps in 1usize..4) {
        let n = z.len();
        let fused: Vec<f64> = z.iter().cycle().take(n * maps).cloned().collect();
        let target: Vec<u8> = y.iter().cycle().take(n * maps).cloned().collect();
        let scales: Vec<Vec<f64>> = (0..5).map(|k| fused.iter().map(|v| v * (k as f64 + 1.0) / 3.0).collect()).collect();
        let refs: Vec<&[f64]> = scales.iter().map(Vec::as_slice).collect();
        for combo in [LossCombo::FocalSoftIou, LossCombo::CeOnly] {
            let sum_cfg = LossConfig { combo, ..Default::default() };
            let mean_cfg = LossConfig { reduction: Reduction::Mean, ..sum_cfg.clone() };
            let s = total_loss_maps(&fused, &refs, &target, n, &sum_cfg).unwrap();
            let m = total_loss_maps(&fused, &refs, &target, n, &mean_cfg).unwrap();
            let expect = s.pixel / (n * maps) as f64 + sum_cfg.focal_soft_iou_relative_weight * s.overlap / maps as f64;
            let expect = if combo == LossCombo::CeOnly { s.pixel / (n * maps) as f64 } else { expect };
            prop_assert!((m.total - expect).abs() < 1e-9 * expect.abs().max(1.0));
        }
    }
}

#[test]
fn shape_and_value_errors() {
    assert!(focal_loss(&[0.0, 1.0], &[1], 1.0, 2.0).is_err());
    assert!(focal_loss(&[0.0], &[2], 1.0, 2.0).is_err());
    assert!(focal_loss(&[0.0], &[1], 0.0, 2.0).is_err());
    assert!(soft_iou_loss(&[0.5], &[1, 0]).is_err());
    let cfg = LossConfig::default();
    let side = [0.0; 6];
    let scales: [&[f64]; 5] = [&side; 5];
    assert!(total_loss_maps(&[0.0; 6], &scales, &[0; 6], 4, &cfg).is_err());
}

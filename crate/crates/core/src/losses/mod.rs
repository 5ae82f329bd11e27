//! Deep-supervised training objective.
//!
//! The default objective is a pixel-summed binary focal loss on the fused
//! logits plus a weighted sum of focal losses on every per-scale logit map,
//! plus a Soft-IoU term on the fused probability map:
//!
//! ```text
//! L = focal(fused) + Σ_i w_i · focal(scale_i) + λ · softiou(σ(fused))
//! ```
//!
//! All loss functions take logits and apply a numerically stable logistic
//! internally. Gradients are derived by hand and returned alongside values;
//! [`graph`] wires them into candle's backward pass.

pub mod graph;
mod pixel;
mod region;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pixel::{focal_loss, weighted_bce_loss, ClassWeights};
pub use region::{lovasz_hinge_loss, soft_iou_loss, soft_iou_loss_logits, SOFT_IOU_EPS};

/// A loss value with its gradient (w.r.t. the logits unless stated otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub(crate) fn check_len<T>(values: &[T], target: &[u8]) -> Result<()> {
    if values.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, target has {}",
            values.len(),
            target.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_binary(target: &[u8]) -> Result<()> {
    if let Some(v) = target.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("target must be binary, found value {v}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossCombo {
    #[serde(rename = "focal+softiou")]
    FocalSoftIou,
    #[serde(rename = "ce_only")]
    CeOnly,
    #[serde(rename = "ce+softiou")]
    CeSoftIou,
    #[serde(rename = "focal+lovasz")]
    FocalLovasz,
    #[serde(rename = "focal_only")]
    FocalOnly,
}

impl LossCombo {
    pub fn uses_focal(self) -> bool {
        matches!(self, Self::FocalSoftIou | Self::FocalLovasz | Self::FocalOnly)
    }
}

impl std::str::FromStr for LossCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown loss combo `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Deep-supervision weight per scale, shallowest first.
    pub scale_weights: Vec<f64>,
    /// Weight λ of the overlap term relative to the pixel term.
    pub focal_soft_iou_relative_weight: f64,
    pub combo: LossCombo,
    pub reduction: Reduction,
    /// Cross-entropy class weights; overwritten from the training split when
    /// `median_frequency` is set.
    pub class_weights: ClassWeights,
    pub median_frequency: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 2.0,
            scale_weights: vec![0.5, 0.75, 1.0, 0.75, 0.5],
            focal_soft_iou_relative_weight: 1.0,
            combo: LossCombo::FocalSoftIou,
            reduction: Reduction::Sum,
            class_weights: ClassWeights::default(),
            median_frequency: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, num_scales: usize) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!("loss.alpha must be > 0, got {}", self.alpha)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("loss.gamma must be >= 0, got {}", self.gamma)));
        }
        if self.scale_weights.len() != num_scales {
            return Err(Error::Config(format!(
                "loss.scale_weights has {} entries, model has {num_scales} scales",
                self.scale_weights.len()
            )));
        }
        if self.scale_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("loss.scale_weights must be finite and >= 0".into()));
        }
        if self.focal_soft_iou_relative_weight < 0.0 {
            return Err(Error::Config("loss.focal_soft_iou_relative_weight must be >= 0".into()));
        }
        Ok(())
    }

    /// Default weights truncated or extended for a model with `num_scales` scales.
    pub fn default_scale_weights(num_scales: usize) -> Vec<f64> {
        match num_scales {
            4 => vec![0.5, 0.75, 0.75, 0.5],
            5 => vec![0.5, 0.75, 1.0, 0.75, 0.5],
            n => vec![1.0; n],
        }
    }
}

/// Loss on the fused map plus `Σ w_i · loss(scale_i)`.
pub fn deep_supervised<F>(
    fused: &[f64],
    scales: &[&[f64]],
    target: &[u8],
    weights: &[f64],
    loss: F,
) -> Result<DeepSupervised>
where
    F: Fn(&[f64], &[u8]) -> Result<LossValue>,
{
    if scales.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} per-scale maps but {} weights",
            scales.len(),
            weights.len()
        )));
    }
    let fused = loss(fused, target)?;
    let mut value = fused.value;
    let mut per_scale = Vec::with_capacity(scales.len());
    for (map, &w) in scales.iter().zip(weights) {
        let l = loss(map, target)?;
        value += w * l.value;
        per_scale.push(l);
    }
    Ok(DeepSupervised {
        value,
        fused,
        per_scale,
    })
}

#[derive(Debug, Clone)]
pub struct DeepSupervised {
    pub value: f64,
    pub fused: LossValue,
    pub per_scale: Vec<LossValue>,
}

/// `L_focal^fused + Σ_i w_i · L_focal^i`.
pub fn total_focal(
    fused_logits: &[f64],
    scale_logits: &[&[f64]],
    target: &[u8],
    weights: &[f64],
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    Ok(deep_supervised(fused_logits, scale_logits, target, weights, |z, y| {
        focal_loss(z, y, alpha, gamma)
    })?
    .value)
}

/// Components of the total objective over a batch, with gradients.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    /// Deep-supervised pixel term (focal or cross-entropy).
    pub pixel: f64,
    /// Overlap term before the λ weight (Soft-IoU or Lovász; 0 when unused).
    pub overlap: f64,
    pub grad_fused: Vec<f64>,
    pub grad_scales: Vec<Vec<f64>>,
}

/// Evaluates the configured objective on a batch of logit maps.
///
/// Every slice holds `maps` images of `pixels_per_map` pixels back to back;
/// the overlap term is computed per image and summed (or averaged).
pub fn total_loss_maps(
    fused: &[f64],
    scales: &[&[f64]],
    target: &[u8],
    pixels_per_map: usize,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if pixels_per_map == 0 || target.len() % pixels_per_map != 0 {
        return Err(Error::Shape(format!(
            "target of {} pixels is not a whole number of {pixels_per_map}-pixel maps",
            target.len()
        )));
    }
    for s in scales {
        check_len(s, target)?;
    }
    let maps = target.len() / pixels_per_map;
    let pixel_scale = match cfg.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / target.len() as f64,
    };
    let overlap_scale = match cfg.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / maps as f64,
    };

    let pixel = if cfg.combo.uses_focal() {
        deep_supervised(fused, scales, target, &cfg.scale_weights, |z, y| {
            focal_loss(z, y, cfg.alpha, cfg.gamma)
        })?
    } else {
        deep_supervised(fused, scales, target, &cfg.scale_weights, |z, y| {
            weighted_bce_loss(z, y, cfg.class_weights)
        })?
    };

    let mut grad_fused: Vec<f64> = pixel.fused.grad.iter().map(|g| g * pixel_scale).collect();
    let grad_scales: Vec<Vec<f64>> = pixel
        .per_scale
        .iter()
        .zip(&cfg.scale_weights)
        .map(|(l, &w)| l.grad.iter().map(|g| g * w * pixel_scale).collect())
        .collect();

    let overlap_fn: Option<fn(&[f64], &[u8]) -> Result<LossValue>> = match cfg.combo {
        LossCombo::FocalSoftIou | LossCombo::CeSoftIou => Some(soft_iou_loss_logits),
        LossCombo::FocalLovasz => Some(lovasz_hinge_loss),
        LossCombo::CeOnly | LossCombo::FocalOnly => None,
    };
    let lambda = cfg.focal_soft_iou_relative_weight;
    let mut overlap = 0.0;
    if let Some(f) = overlap_fn {
        for (k, (z, y)) in fused
            .chunks_exact(pixels_per_map)
            .zip(target.chunks_exact(pixels_per_map))
            .enumerate()
        {
            let l = f(z, y)?;
            overlap += l.value;
            let dst = &mut grad_fused[k * pixels_per_map..(k + 1) * pixels_per_map];
            for (d, g) in dst.iter_mut().zip(&l.grad) {
                *d += lambda * overlap_scale * g;
            }
        }
    }
    let pixel_value = pixel.value * pixel_scale;
    let overlap = overlap * overlap_scale;
    Ok(LossBreakdown {
        total: pixel_value + lambda * overlap,
        pixel: pixel_value,
        overlap,
        grad_fused,
        grad_scales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_reduce_to_fused_only() {
        let f = [0.2, -0.4, 1.0, -2.0];
        let s1 = [1.0, 1.0, -1.0, 0.0];
        let y = [1u8, 0, 1, 0];
        let t = total_focal(&f, &[&s1, &s1], &y, &[0.0, 0.0], 1.0, 2.0).unwrap();
        assert_eq!(t, focal_loss(&f, &y, 1.0, 2.0).unwrap().value);
    }

    #[test]
    fn identical_scale_losses_weigh_three_and_a_half() {
        let f = [0.2, -0.4, 1.0, -2.0];
        let s = [0.7, 0.1, -0.3, 0.9];
        let y = [1u8, 0, 1, 0];
        let l_fused = focal_loss(&f, &y, 1.0, 2.0).unwrap().value;
        let l = focal_loss(&s, &y, 1.0, 2.0).unwrap().value;
        let t = total_focal(&f, &[&s[..]; 5], &y, &LossConfig::default().scale_weights, 1.0, 2.0).unwrap();
        assert!((t - (l_fused + 3.5 * l)).abs() < 1e-12);
    }

    #[test]
    fn weight_length_mismatch_is_an_error() {
        let y = [1u8];
        assert!(total_focal(&[0.0], &[&[0.0]], &y, &[0.5, 0.5], 1.0, 2.0).is_err());
    }

    #[test]
    fn zero_lambda_is_focal_only() {
        let f = [0.2, -0.4, 1.0, -2.0];
        let s = [0.7, 0.1, -0.3, 0.9];
        let y = [1u8, 0, 1, 0];
        let cfg = LossConfig {
            scale_weights: vec![1.0],
            focal_soft_iou_relative_weight: 0.0,
            ..Default::default()
        };
        let only = LossConfig {
            combo: LossCombo::FocalOnly,
            ..cfg.clone()
        };
        let a = total_loss_maps(&f, &[&s], &y, 4, &cfg).unwrap();
        let b = total_loss_maps(&f, &[&s], &y, 4, &only).unwrap();
        assert!((a.total - b.total).abs() < 1e-15);
    }

    #[test]
    fn combo_names_round_trip() {
        for (name, combo) in [
            ("focal+softiou", LossCombo::FocalSoftIou),
            ("ce_only", LossCombo::CeOnly),
            ("ce+softiou", LossCombo::CeSoftIou),
            ("focal+lovasz", LossCombo::FocalLovasz),
            ("focal_only", LossCombo::FocalOnly),
        ] {
            assert_eq!(name.parse::<LossCombo>().unwrap(), combo);
        }
        assert!("dice".parse::<LossCombo>().is_err());
    }

    #[test]
    fn validate_catches_bad_configs() {
        let mut c = LossConfig::default();
        assert!(c.validate(5).is_ok());
        assert!(c.validate(4).is_err());
        c.alpha = 0.0;
        assert!(c.validate(5).is_err());
    }
}

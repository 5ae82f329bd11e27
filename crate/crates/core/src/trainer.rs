//! Optimisation loop, evaluation, cross-dataset runs and ablations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_model, CheckpointMeta};
use crate::config::{RunConfig, TrainConfig};
use crate::datapipe::{augment, batch_iterator, Sample};
use crate::error::{Error, Result};
use crate::losses::graph::total_loss;
use crate::losses::{ClassWeights, LossCombo, LossConfig};
use crate::metrics::{csv_writer, default_grid, MetricReport, RegionRule, ScoredMap};
use crate::model::{InitConfig, InitScheme, Mode, Model, ModelConfig, ParamStore};
use crate::prior::{assemble_input, EdgeDetector};

/// SGD with heavy-ball momentum and L2 weight decay added to the gradient:
/// `d = g + wd·θ`, `v ← μ·v + d` (`v = d` on the first step), `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    }

    /// Updates every parameter; one without a gradient is treated as having
    /// a zero gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<()> {
        for (name, p) in params.iter() {
            let theta = p.var.as_tensor().detach();
            let mut d = match grads.get(p.var.as_tensor()) {
                Some(g) => g.detach(),
                None => theta.zeros_like()?,
            };
            if self.weight_decay != 0.0 {
                d = (d + theta.affine(self.weight_decay, 0.0)?)?;
            }
            let v = match self.velocity.get(name) {
                Some(prev) if self.momentum != 0.0 => (prev.affine(self.momentum, 0.0)? + d)?,
                _ => d,
            };
            p.var.set(&(theta - v.affine(self.learning_rate, 0.0)?)?)?;
            self.velocity.insert(name.to_string(), v);
        }
        Ok(())
    }
}

/// Network input for one sample. A four-channel model uses the stored edge
/// map when present, otherwise runs the detector on the image.
pub fn sample_input(sample: &Sample, channels: usize, detector: &EdgeDetector) -> Result<Vec<f32>> {
    match channels {
        3 => assemble_input(&sample.image, None),
        4 => {
            let computed;
            let edge = match (&sample.edge, detector.is_precomputed()) {
                (Some(e), _) => e,
                (None, true) => {
                    return Err(Error::Data(format!(
                        "{}: precomputed edge mode but no edge map was found",
                        sample.id
                    )))
                }
                (None, false) => {
                    computed = detector.compute(&sample.image)?;
                    &computed
                }
            };
            assemble_input(&sample.image, Some(edge))
        }
        c => Err(Error::Shape(format!("unsupported input channel count {c}"))),
    }
}

fn batch_tensor(samples: &[&Sample], channels: usize, detector: &EdgeDetector, device: &Device) -> Result<(Tensor, Vec<u8>)> {
    let (w, h) = samples[0].image.dimensions();
    let mut data = Vec::with_capacity(samples.len() * channels * (w * h) as usize);
    let mut target = Vec::with_capacity(samples.len() * (w * h) as usize);
    for s in samples {
        if s.image.dimensions() != (w, h) {
            return Err(Error::Shape(format!("batch mixes sizes {:?} and {:?}", (w, h), s.image.dimensions())));
        }
        data.extend(sample_input(s, channels, detector)?);
        target.extend_from_slice(s.mask.as_raw());
    }
    let x = Tensor::from_vec(data, (samples.len(), channels, h as usize, w as usize), device)?;
    Ok((x, target))
}

/// One row of `history.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: u64,
    pub loss_total: f64,
    /// Deep-supervised pixel term (focal, or cross-entropy for CE combos).
    pub loss_focal: f64,
    /// Overlap term (Soft-IoU, or Lovász for that combo).
    pub loss_iou: f64,
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    pub iterations: u64,
    pub epochs: usize,
    pub best_validation_f1: Option<f64>,
    pub stopped_early: bool,
    /// Loss configuration actually used, with class weights filled in.
    pub loss: LossConfig,
}

/// Median-frequency class weights from the training masks when the
/// configuration asks for them and the pixel term is cross-entropy.
pub fn resolve_loss(cfg: &LossConfig, samples: &[Sample]) -> Result<LossConfig> {
    let mut cfg = cfg.clone();
    if cfg.median_frequency && !cfg.combo.uses_focal() {
        cfg.class_weights = ClassWeights::median_frequency(samples.iter().map(|s| s.mask.as_raw().as_slice()))?;
    }
    Ok(cfg)
}

/// Trains `model` in place.
///
/// Each epoch augments every sample with a generator seeded by
/// `(train.seed, epoch)` and walks the crops in seeded batches. With a
/// validation set, F1 is measured every `eval_every` epochs; training stops
/// after `patience` measurements without improvement and the best parameters
/// are restored. Periodic checkpoints go to `out_dir/checkpoints`.
pub fn train(
    model: &Model,
    samples: &[Sample],
    validation: &[Sample],
    cfg: &RunConfig,
    detector: &EdgeDetector,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let tc = &cfg.train;
    tc.validate()?;
    let loss_cfg = resolve_loss(&cfg.loss, samples)?;
    loss_cfg.validate(model.config().num_scales)?;
    let channels = model.config().input_channels;
    let mut sgd = Sgd::from_config(tc);
    let mut history = Vec::new();
    let mut iteration = 0u64;
    let mut best: Option<(f64, Vec<(String, Tensor)>)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut epochs = 0;
    let cap = tc.max_iterations.unwrap_or(u64::MAX);

    'epochs: for epoch in 0..tc.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut crops = Vec::new();
        for s in samples {
            crops.extend(augment(s, &cfg.data.augment, &mut rng)?);
        }
        for batch in batch_iterator(crops.len(), tc.batch_size, tc.seed, epoch as u64, tc.deterministic) {
            if iteration >= cap {
                break 'epochs;
            }
            let refs: Vec<&Sample> = batch.iter().map(|&i| &crops[i]).collect();
            let (x, target) = batch_tensor(&refs, channels, detector, model.device())?;
            let out = model.forward(&x, Mode::Train)?;
            let (loss, summary) = total_loss(&out, &target, &loss_cfg)?;
            iteration += 1;
            if !summary.total.is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    loss: summary.total,
                });
            }
            let grads = loss.backward()?;
            sgd.step(model.params(), &grads)?;
            history.push(HistoryRow {
                iter: iteration,
                loss_total: summary.total,
                loss_focal: summary.pixel,
                loss_iou: summary.overlap,
            });
            if iteration % 50 == 0 {
                log::info!("iter {iteration}: loss {:.4}", summary.total);
            }
        }
        epochs = epoch + 1;
        if let Some(dir) = out_dir {
            if tc.checkpoint_every > 0 && epochs % tc.checkpoint_every == 0 {
                let meta = CheckpointMeta {
                    threshold: None,
                    iterations: iteration,
                    seed: tc.seed,
                };
                save_model(dir.join("checkpoints").join(format!("epoch_{epochs:04}.ckpt")), model, meta)?;
            }
        }
        if !validation.is_empty() && tc.patience > 0 && epochs % tc.eval_every == 0 {
            let f1 = evaluate(model, validation, detector, &cfg.data.region, None)?.f1;
            log::info!("epoch {epochs}: validation F1 {f1:.4}");
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                let snapshot = model
                    .params()
                    .iter()
                    .map(|(k, p)| (k.to_string(), p.var.as_tensor().copy().expect("copy")))
                    .collect();
                best = Some((f1, snapshot));
                stale = 0;
            } else {
                stale += 1;
                if stale >= tc.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        if iteration >= cap {
            break;
        }
    }
    let best_validation_f1 = best.as_ref().map(|(f, _)| *f);
    if let Some((_, snapshot)) = best {
        for (k, t) in snapshot {
            model.params().set(&k, &t)?;
        }
    }
    if let Some(dir) = out_dir {
        write_history(&dir.join("history.csv"), &history)?;
    }
    Ok(TrainOutcome {
        history,
        iterations: iteration,
        epochs,
        best_validation_f1,
        stopped_early,
        loss: loss_cfg,
    })
}

/// Fused probabilities for one sample, any size.
pub fn predict_probs(model: &Model, sample: &Sample, detector: &EdgeDetector) -> Result<Vec<f32>> {
    let channels = model.config().input_channels;
    let (w, h) = sample.image.dimensions();
    let x = Tensor::from_vec(
        sample_input(sample, channels, detector)?,
        (1, channels, h as usize, w as usize),
        model.device(),
    )?;
    Ok(model.predict_fused(&x)?.flatten_all()?.to_vec1::<f32>()?)
}

pub fn score_maps(model: &Model, samples: &[Sample], detector: &EdgeDetector) -> Result<Vec<ScoredMap>> {
    samples
        .iter()
        .map(|s| {
            let probs = predict_probs(model, s, detector)?;
            ScoredMap::new(s.height() as usize, s.width() as usize, probs, s.mask_bits())
        })
        .collect()
}

/// Scores `samples`; the threshold is chosen on the 0.01 grid unless given.
pub fn evaluate(
    model: &Model,
    samples: &[Sample],
    detector: &EdgeDetector,
    rule: &RegionRule,
    threshold: Option<f64>,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let maps = score_maps(model, samples, detector)?;
    let rule = clamp_rule(rule, &maps);
    match threshold {
        Some(t) => MetricReport::at_threshold(&maps, &default_grid(), t, &rule),
        None => MetricReport::compute(&maps, &default_grid(), &rule),
    }
}

// Patches larger than the smallest map are shrunk to fit it.
fn clamp_rule(rule: &RegionRule, maps: &[ScoredMap]) -> RegionRule {
    let min_side = maps.iter().map(|m| m.height.min(m.width)).min().unwrap_or(rule.patch);
    if rule.patch > min_side {
        log::warn!("region patch {} exceeds a {min_side}-pixel map; using {min_side}", rule.patch);
    }
    RegionRule {
        patch: rule.patch.min(min_side),
        ..*rule
    }
}

/// F1 of every model on every test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub trained_on: Vec<String>,
    pub tested_on: Vec<String>,
    /// `f1[i][j]`: model `i` on test set `j`.
    pub f1: Vec<Vec<f64>>,
}

impl CrossMatrix {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let io = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
        let mut header = vec!["trained_on".to_string()];
        header.extend(self.tested_on.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for (name, row) in self.trained_on.iter().zip(&self.f1) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn cross_evaluate(
    models: &[(String, &Model)],
    test_sets: &[(String, Vec<Sample>)],
    detector: &EdgeDetector,
    rule: &RegionRule,
) -> Result<CrossMatrix> {
    if models.is_empty() || test_sets.is_empty() {
        return Err(Error::InvalidArgument("cross evaluation needs at least one model and one test set".into()));
    }
    let mut f1 = Vec::with_capacity(models.len());
    for (_, m) in models {
        let row = test_sets
            .iter()
            .map(|(_, s)| Ok(evaluate(m, s, detector, rule, None)?.f1))
            .collect::<Result<Vec<_>>>()?;
        f1.push(row);
    }
    Ok(CrossMatrix {
        trained_on: models.iter().map(|(n, _)| n.clone()).collect(),
        tested_on: test_sets.iter().map(|(n, _)| n.clone()).collect(),
        f1,
    })
}

/// A named set of toggles applied over a base configuration. `None` keeps
/// the base setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationVariant {
    pub name: String,
    pub attention_encoder: Option<bool>,
    pub attention_decoder: Option<bool>,
    /// Pixel term: focal (`true`) or cross-entropy (`false`).
    pub focal: Option<bool>,
    /// Soft-IoU overlap term on or off.
    pub soft_iou: Option<bool>,
    pub edge_channel: Option<bool>,
    pub scalar_weights: Option<bool>,
    pub num_scales: Option<usize>,
    /// Explicit combination; overrides `focal` and `soft_iou`.
    pub loss_combo: Option<LossCombo>,
    pub init_scheme: Option<InitConfig>,
}

impl AblationVariant {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let m = &mut cfg.model;
        if let Some(v) = self.attention_encoder {
            m.attention_in_encoder = v;
        }
        if let Some(v) = self.attention_decoder {
            m.attention_in_decoder = v;
        }
        if let Some(v) = self.scalar_weights {
            m.use_scalar_weight_variant = v;
        }
        if let Some(v) = self.edge_channel {
            m.input_channels = if v { 4 } else { 3 };
        }
        if let Some(n) = self.num_scales {
            if n > m.encoder_channels.len() {
                return Err(Error::Config(format!(
                    "variant `{}` asks for {n} scales, base has {}",
                    self.name,
                    m.encoder_channels.len()
                )));
            }
            m.num_scales = n;
            m.encoder_channels.truncate(n);
            m.convs_per_block.truncate(n);
            if cfg.loss.scale_weights.len() != n {
                cfg.loss.scale_weights = LossConfig::default_scale_weights(n);
            }
        }
        let (focal, iou) = (
            self.focal.unwrap_or(cfg.loss.combo.uses_focal()),
            self.soft_iou.unwrap_or(matches!(cfg.loss.combo, LossCombo::FocalSoftIou | LossCombo::CeSoftIou)),
        );
        if self.focal.is_some() || self.soft_iou.is_some() {
            cfg.loss.combo = match (focal, iou) {
                (true, true) => LossCombo::FocalSoftIou,
                (true, false) => LossCombo::FocalOnly,
                (false, true) => LossCombo::CeSoftIou,
                (false, false) => LossCombo::CeOnly,
            };
        }
        if let Some(c) = self.loss_combo {
            cfg.loss.combo = c;
        }
        if let Some(init) = &self.init_scheme {
            cfg.train.init = init.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The architecture ablation columns, left to right.
pub fn architecture_variants() -> Vec<AblationVariant> {
    let plain = |name: &str, attn: bool| AblationVariant {
        attention_encoder: Some(attn),
        attention_decoder: Some(attn),
        edge_channel: Some(false),
        num_scales: Some(5),
        scalar_weights: Some(false),
        ..AblationVariant::named(name)
    };
    vec![
        AblationVariant {
            loss_combo: Some(LossCombo::CeOnly),
            ..plain("Baseline", false)
        },
        AblationVariant {
            loss_combo: Some(LossCombo::CeOnly),
            ..plain("Baseline+Attn", true)
        },
        AblationVariant {
            loss_combo: Some(LossCombo::FocalOnly),
            ..plain("Baseline+Attn+Focal Loss", true)
        },
        AblationVariant {
            loss_combo: Some(LossCombo::FocalSoftIou),
            ..plain("Baseline+Attn+Focal Loss+Soft_IoU", true)
        },
        AblationVariant {
            loss_combo: Some(LossCombo::CeOnly),
            scalar_weights: Some(true),
            ..plain("Baseline+ScalarWeights", true)
        },
        AblationVariant {
            loss_combo: Some(LossCombo::FocalSoftIou),
            edge_channel: Some(true),
            num_scales: Some(4),
            ..plain("Baseline+Attn+Focal+Soft-IoU+Edges-1 level", true)
        },
        AblationVariant {
            loss_combo: Some(LossCombo::FocalSoftIou),
            edge_channel: Some(true),
            ..plain("Peak Performance", true)
        },
    ]
}

/// The loss-combination ablation columns.
pub fn loss_variants() -> Vec<AblationVariant> {
    [
        ("CE Loss Only", LossCombo::CeOnly),
        ("CE + Soft-IoU loss", LossCombo::CeSoftIou),
        ("Focal Loss + Lovász Loss", LossCombo::FocalLovasz),
        ("Focal Loss + Soft-IoU loss", LossCombo::FocalSoftIou),
    ]
    .into_iter()
    .map(|(n, c)| AblationVariant {
        loss_combo: Some(c),
        ..AblationVariant::named(n)
    })
    .collect()
}

/// Looks up a built-in variant set by name.
pub fn variant_set(name: &str) -> Result<Vec<AblationVariant>> {
    match name {
        "architecture" => Ok(architecture_variants()),
        "loss" => Ok(loss_variants()),
        other => Err(Error::Config(format!("unknown variant set `{other}` (architecture, loss)"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub variant: String,
    pub f1: f64,
    /// Parameter count in millions.
    pub size_m: f64,
    pub parameters: usize,
    pub auprc: f64,
}

/// Builds and initialises a model for a run configuration.
pub fn build_model(cfg: &RunConfig, device: &Device) -> Result<Model> {
    let model = Model::new(cfg.model.clone(), device)?;
    model.init_weights(&InitScheme::from_config(&cfg.train.init)?, cfg.train.seed)?;
    Ok(model)
}

/// Trains and evaluates every variant with the same seed and data.
pub fn ablation_run(
    variants: &[AblationVariant],
    base: &RunConfig,
    dataset: &str,
    train_set: &[Sample],
    test_set: &[Sample],
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = v.apply(base)?;
        let detector = EdgeDetector::from_config(&cfg.prior, &Device::Cpu)?;
        let model = build_model(&cfg, &Device::Cpu)?;
        let dir: Option<PathBuf> = out_dir.map(|d| d.join(slug(&v.name)));
        log::info!("ablation `{}`: {} parameters", v.name, model.parameter_count());
        train(&model, train_set, &[], &cfg, &detector, dir.as_deref())?;
        let report = evaluate(&model, test_set, &detector, &cfg.data.region, None)?;
        if let Some(d) = &dir {
            report.write_metrics_csv(&d.join("metrics.csv"))?;
            report.write_prc_csv(&d.join("prc.csv"))?;
        }
        rows.push(AblationRow {
            dataset: dataset.into(),
            variant: v.name.clone(),
            f1: report.f1,
            size_m: model.parameter_count() as f64 / 1e6,
            parameters: model.parameter_count(),
            auprc: report.auprc,
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// File-name-safe form of a variant name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_")
}

/// Model configuration for a variant without building it.
pub fn variant_model(v: &AblationVariant, base: &RunConfig) -> Result<ModelConfig> {
    Ok(v.apply(base)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Var};

    #[test]
    fn weight_decay_step_scales_parameters() {
        let mut store = ParamStore::new(Device::Cpu, DType::F64);
        let v = store
            .add("w".into(), &[3], crate::model::ParamKind::Bias)
            .unwrap();
        v.set(&Tensor::new(&[1.0f64, -2.0, 0.5], &Device::Cpu).unwrap()).unwrap();
        let other = Var::new(&[0.0f64], &Device::Cpu).unwrap();
        let grads = other.as_tensor().sum_all().unwrap().backward().unwrap();
        let mut sgd = Sgd::new(0.1, 0.9, 0.01);
        sgd.step(&store, &grads).unwrap();
        let got = v.as_tensor().to_vec1::<f64>().unwrap();
        for (g, e) in got.iter().zip([1.0, -2.0, 0.5]) {
            assert!((g - e * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
        }
    }

    #[test]
    fn heavy_ball_on_quadratic() {
        // f(θ) = a/2 · θ², gradient aθ.
        let (a, lr, mu) = (3.0, 0.05, 0.9);
        let mut store = ParamStore::new(Device::Cpu, DType::F64);
        let v = store.add("t".into(), &[1], crate::model::ParamKind::Bias).unwrap();
        v.set(&Tensor::new(&[2.0f64], &Device::Cpu).unwrap()).unwrap();
        let mut sgd = Sgd::new(lr, mu, 0.0);
        let (mut theta, mut vel) = (2.0f64, 0.0f64);
        for k in 0..50 {
            let loss = v.as_tensor().sqr().unwrap().sum_all().unwrap().affine(a / 2.0, 0.0).unwrap();
            sgd.step(&store, &loss.backward().unwrap()).unwrap();
            let g = a * theta;
            vel = if k == 0 { g } else { mu * vel + g };
            theta -= lr * vel;
            let got = v.as_tensor().to_vec1::<f64>().unwrap()[0];
            assert!((got - theta).abs() < 1e-10, "step {k}: {got} vs {theta}");
        }
    }

    #[test]
    fn variants_map_to_valid_configs() {
        let base = RunConfig::default();
        let v = architecture_variants();
        assert_eq!(v.len(), 7);
        let cfgs: Vec<_> = v.iter().map(|x| x.apply(&base).unwrap()).collect();
        assert!(!cfgs[0].model.has_attention());
        assert_eq!(cfgs[0].model.input_channels, 3);
        assert_eq!(cfgs[5].model.num_scales, 4);
        assert_eq!(cfgs[5].loss.scale_weights.len(), 4);
        assert_eq!(cfgs[6].model, ModelConfig::full());
        let combo = AblationVariant {
            focal: Some(false),
            soft_iou: Some(true),
            ..AblationVariant::named("x")
        };
        assert_eq!(combo.apply(&base).unwrap().loss.combo, LossCombo::CeSoftIou);
        assert_eq!(slug("Baseline+Attn+Focal Loss"), "baseline_attn_focal_loss");
        assert!(variant_set("nope").is_err());
    }
}

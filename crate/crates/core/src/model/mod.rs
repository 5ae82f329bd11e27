//! The segmentation network.
//!
//! Four sub-networks share one parameter store:
//!
//! * **encoder** – VGG-style convolution blocks, each followed by 2×2 max
//!   pooling (argmax indices kept) and an attention site. The gated map
//!   continues down the trunk; the refined side map feeds the enhancement
//!   encoder.
//! * **enhancement encoder** – projects every side map, then fuses them from
//!   the deepest scale to the shallowest by 2× bilinear upsampling and
//!   addition, emitting one side map `f_e` per scale.
//! * **decoder** – mirror of the encoder: unpooling with the stored indices,
//!   convolutions, and an attention site per stage emitting `f_d`.
//! * **fused network** – stage `k` pairs `f_e^k` with `f_d^{N+1-k}`,
//!   concatenates every previous stage output, applies a 1×1 convolution and
//!   a learned transposed-convolution upsampling to full resolution. With one
//!   side channel this gives input widths 2, 3, 4, 5, 6. A final 1×1
//!   convolution over all stage outputs produces the fused logits.

mod blocks;
mod config;
mod params;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::nn::{max_pool_with_indices, resize_bilinear, sigmoid, unpool, PoolIndices};

pub use blocks::{Attended, Attention, Conv, Mode};
pub use config::ModelConfig;
pub use params::{InitConfig, InitScheme, Param, ParamKind, ParamStore};

use blocks::{ConvBlock, SiteHead, Upsampler};

/// Trunk maps, pooling indices and side maps of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderState {
    /// Trunk after pooling and attention at each scale.
    pub trunk: Vec<Tensor>,
    pub indices: Vec<PoolIndices>,
    /// Side maps (refined attention output or plain projection) at each scale.
    pub sides: Vec<Tensor>,
    /// Attention masks, when attention is enabled.
    pub masks: Vec<Option<Tensor>>,
}

/// All outputs of a forward pass. Per-scale vectors are indexed by scale,
/// shallowest first, so `scale_logits[0]` is `f_ed^1`.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub scale_logits: Vec<Tensor>,
    pub scale_probs: Vec<Tensor>,
    pub fused_logits: Tensor,
    pub fused_probs: Tensor,
    pub enhancement_sides: Vec<Tensor>,
    pub decoder_sides: Vec<Tensor>,
}

struct Encoder {
    blocks: Vec<ConvBlock>,
    heads: Vec<SiteHead>,
}

struct Enhancement {
    projections: Vec<Conv>,
    heads: Vec<Conv>,
}

struct Decoder {
    blocks: Vec<ConvBlock>,
    heads: Vec<SiteHead>,
}

struct FusedStage {
    conv: Conv,
    upsample: Upsampler,
}

struct Fused {
    stages: Vec<FusedStage>,
    combine: Conv,
}

pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    enhancement: Enhancement,
    decoder: Decoder,
    fused: Fused,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.params.scalar_count())
            .finish()
    }
}

impl Model {
    /// Builds the graph with zero-valued parameters; see [`Model::init_weights`].
    pub fn new(config: ModelConfig, device: &Device) -> Result<Self> {
        Self::with_dtype(config, device, DType::F32)
    }

    pub fn with_dtype(config: ModelConfig, device: &Device, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(device.clone(), dtype);
        let n = config.num_scales;
        let side = config.attention_out_channels;
        let norm = config.use_instance_norm;
        let scalar = config.use_scalar_weight_variant;
        let ch = &config.encoder_channels;

        let mut enc_blocks = Vec::with_capacity(n);
        let mut enc_heads = Vec::with_capacity(n);
        let mut cin = config.input_channels;
        for s in 0..n {
            let mut widths = vec![cin];
            widths.extend(std::iter::repeat(ch[s]).take(config.convs_per_block[s]));
            enc_blocks.push(ConvBlock::new(&mut store, &format!("encoder.block{}", s + 1), &widths, norm)?);
            enc_heads.push(SiteHead::new(
                &mut store,
                &format!("encoder.site{}", s + 1),
                ch[s],
                side,
                config.attention_in_encoder,
                scalar,
            )?);
            cin = ch[s];
        }

        let e = config.enhancement_channels;
        let mut projections = Vec::with_capacity(n);
        let mut enh_heads = Vec::with_capacity(n);
        for s in 0..n {
            projections.push(Conv::new(&mut store, &format!("enhance.proj{}", s + 1), side, e, 1)?);
            enh_heads.push(Conv::new(&mut store, &format!("enhance.head{}", s + 1), e, side, 1)?);
        }

        let mut dec_blocks = Vec::with_capacity(n);
        let mut dec_heads = Vec::with_capacity(n);
        for stage in 1..=n {
            let s = n - stage; // encoder scale index this stage mirrors
            let c = ch[s];
            let out = if s == 0 { ch[0] } else { ch[s - 1] };
            let mut widths = vec![c; config.convs_per_block[s]];
            widths.push(out);
            dec_blocks.push(ConvBlock::new(&mut store, &format!("decoder.block{stage}"), &widths, norm)?);
            dec_heads.push(SiteHead::new(
                &mut store,
                &format!("decoder.site{stage}"),
                out,
                side,
                config.attention_in_decoder,
                scalar,
            )?);
        }

        let mut stages = Vec::with_capacity(n);
        for k in 1..=n {
            let cin = 2 * side + (k - 1);
            stages.push(FusedStage {
                conv: Conv::new(&mut store, &format!("fuse.stage{k}.conv"), cin, 1, 1)?,
                upsample: Upsampler::new(&mut store, &format!("fuse.stage{k}.up"), 1 << (k - 1))?,
            });
        }
        let combine = Conv::new(&mut store, "fuse.combine", n, 1, 1)?;

        Ok(Self {
            config,
            params: store,
            encoder: Encoder {
                blocks: enc_blocks,
                heads: enc_heads,
            },
            enhancement: Enhancement {
                projections,
                heads: enh_heads,
            },
            decoder: Decoder {
                blocks: dec_blocks,
                heads: dec_heads,
            },
            fused: Fused { stages, combine },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Exact number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Input width of every fused stage's 1×1 convolution, stage 1 first.
    pub fn fused_stage_input_channels(&self) -> Vec<usize> {
        self.fused.stages.iter().map(|s| s.conv.in_channels()).collect()
    }

    pub fn fused_combine_input_channels(&self) -> usize {
        self.fused.combine.in_channels()
    }

    pub fn init_weights(&self, scheme: &InitScheme, seed: u64) -> Result<()> {
        self.params.init_xavier(seed)?;
        if let InitScheme::PretrainedEncoder(path) = scheme {
            let ckpt = crate::checkpoint::Checkpoint::read(path)?;
            let mut loaded = 0;
            for (name, value) in ckpt.tensors(self.device())? {
                if name.starts_with("encoder.") && self.params.get(&name).is_some() {
                    self.params.set(&name, &value)?;
                    loaded += 1;
                }
            }
            if loaded == 0 {
                return Err(Error::Checkpoint {
                    path: path.clone(),
                    reason: "no compatible encoder parameters found".into(),
                });
            }
            log::info!("initialised {loaded} encoder tensors from {}", path.display());
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input size {h}x{w} is not divisible by 2^{} = {m}",
                self.config.num_scales
            )));
        }
        Ok((n, h, w))
    }

    pub fn encoder_forward(&self, x: &Tensor, mode: Mode) -> Result<EncoderState> {
        self.check_input(x)?;
        let n = self.config.num_scales;
        let mut state = EncoderState {
            trunk: Vec::with_capacity(n),
            indices: Vec::with_capacity(n),
            sides: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut h = x.clone();
        for (block, head) in self.encoder.blocks.iter().zip(&self.encoder.heads) {
            let features = block.forward(&h, mode)?;
            let (pooled, idx) = max_pool_with_indices(&features)?;
            let (trunk, side, mask) = head.forward(&pooled, mode)?;
            state.indices.push(idx);
            state.sides.push(side);
            state.masks.push(mask);
            state.trunk.push(trunk.clone());
            h = trunk;
        }
        Ok(state)
    }

    /// One side map per scale, fused from the deepest scale upwards.
    pub fn enhancement_forward(&self, state: &EncoderState, mode: Mode) -> Result<Vec<Tensor>> {
        let n = self.config.num_scales;
        if state.sides.len() != n {
            return Err(Error::Shape(format!("expected {n} encoder side maps, got {}", state.sides.len())));
        }
        let mut out = vec![None; n];
        let mut carry: Option<Tensor> = None;
        for s in (0..n).rev() {
            let projected = self.enhancement.projections[s].forward(&state.sides[s], mode)?;
            let fused = match carry {
                None => projected,
                Some(deeper) => {
                    let (_, _, h, w) = projected.dims4()?;
                    (projected + resize_bilinear(&deeper, h, w)?)?
                }
            };
            out[s] = Some(self.enhancement.heads[s].forward(&fused, mode)?);
            carry = Some(fused);
        }
        Ok(out.into_iter().map(|t| t.expect("filled")).collect())
    }

    /// Decoder side maps `f_d^1..f_d^N`, coarsest stage first.
    pub fn decoder_forward(&self, state: &EncoderState, mode: Mode) -> Result<Vec<Tensor>> {
        let n = self.config.num_scales;
        if state.indices.len() != n || state.trunk.len() != n {
            return Err(Error::Shape(format!(
                "decoder needs {n} index grids and trunk maps, got {} and {}",
                state.indices.len(),
                state.trunk.len()
            )));
        }
        let mut h = state.trunk[n - 1].clone();
        let mut sides = Vec::with_capacity(n);
        for (stage, (block, head)) in self.decoder.blocks.iter().zip(&self.decoder.heads).enumerate() {
            let s = n - 1 - stage;
            let up = unpool(&h, &state.indices[s])?;
            let features = block.forward(&up, mode)?;
            let (trunk, side, _) = head.forward(&features, mode)?;
            sides.push(side);
            h = trunk;
        }
        Ok(sides)
    }

    /// Returns `(f_ed^1..f_ed^N, f^fused)` as logits at full resolution.
    pub fn fused_forward(&self, f_e: &[Tensor], f_d: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, Tensor)> {
        let n = self.config.num_scales;
        if f_e.len() != n || f_d.len() != n {
            return Err(Error::Shape(format!(
                "fused network needs {n} enhancement and decoder maps, got {} and {}",
                f_e.len(),
                f_d.len()
            )));
        }
        let (_, _, full_h, full_w) = f_d[n - 1].dims4()?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n);
        for (k, stage) in self.fused.stages.iter().enumerate() {
            let dec = &f_d[n - 1 - k];
            let (_, _, h, w) = dec.dims4()?;
            let factor = stage.upsample.factor();
            if h * factor != full_h || w * factor != full_w {
                return Err(Error::Shape(format!(
                    "fused stage {} expects decoder map of {}x{}, got {h}x{w}",
                    k + 1,
                    full_h / factor,
                    full_w / factor
                )));
            }
            let mut parts = vec![resize_bilinear(&f_e[k], h, w)?, dec.clone()];
            for prev in &outputs {
                parts.push(if factor == 1 { prev.clone() } else { prev.avg_pool2d(factor)? });
            }
            let cat = Tensor::cat(&parts, 1)?;
            if cat.dim(1)? != stage.conv.in_channels() {
                return Err(Error::Shape(format!(
                    "fused stage {} expects {} input channels, got {}",
                    k + 1,
                    stage.conv.in_channels(),
                    cat.dim(1)?
                )));
            }
            let y = stage.conv.forward(&cat, mode)?;
            outputs.push(stage.upsample.forward(&y, mode)?);
        }
        // outputs[k] is f_ed^{N-k}; the combiner sees f_ed^N..f_ed^1.
        let fused = self.fused.combine.forward(&Tensor::cat(&outputs, 1)?, mode)?;
        outputs.reverse();
        Ok((outputs, fused))
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<ForwardOutput> {
        let state = self.encoder_forward(x, mode)?;
        let f_e = self.enhancement_forward(&state, mode)?;
        let f_d = self.decoder_forward(&state, mode)?;
        let (scale_logits, fused_logits) = self.fused_forward(&f_e, &f_d, mode)?;
        let scale_probs = scale_logits.iter().map(sigmoid).collect::<Result<Vec<_>>>()?;
        let fused_probs = sigmoid(&fused_logits)?;
        Ok(ForwardOutput {
            scale_logits,
            scale_probs,
            fused_logits,
            fused_probs,
            enhancement_sides: f_e,
            decoder_sides: f_d,
        })
    }

    /// Fused probability map for inputs of any size: replicate-pads each side
    /// to the next multiple of `2^num_scales` (centred), predicts, crops back.
    pub fn predict_fused(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        let m = self.config.size_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let (top, left) = ((ph - h) / 2, (pw - w) / 2);
        let padded = x
            .pad_with_same(2, top, ph - h - top)?
            .pad_with_same(3, left, pw - w - left)?;
        let out = self.forward(&padded, Mode::Eval)?;
        Ok(out.fused_probs.narrow(2, top, h)?.narrow(3, left, w)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mut cfg: ModelConfig) -> ModelConfig {
        cfg.encoder_channels = cfg.encoder_channels.iter().map(|_| 4).collect();
        cfg.enhancement_channels = 2;
        cfg
    }

    fn input(n: usize, c: usize, s: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..n * c * s * s).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, (n, c, s, s), &Device::Cpu).unwrap()
    }

    #[test]
    fn encoder_shapes_halve_per_scale() {
        let m = Model::new(tiny(ModelConfig::full()), &Device::Cpu).unwrap();
        m.init_weights(&InitScheme::Xavier, 1).unwrap();
        let st = m.encoder_forward(&input(1, 4, 64, 0), Mode::Eval).unwrap();
        let sizes: Vec<usize> = st.trunk.iter().map(|t| t.dim(2).unwrap()).collect();
        assert_eq!(sizes, vec![32, 16, 8, 4, 2]);
        for (t, idx) in st.trunk.iter().zip(&st.indices) {
            assert_eq!(t.dims4().unwrap(), idx.pooled_dims());
        }
        let f_e = m.enhancement_forward(&st, Mode::Eval).unwrap();
        let sizes: Vec<usize> = f_e.iter().map(|t| t.dim(2).unwrap()).collect();
        assert_eq!(sizes, vec![32, 16, 8, 4, 2]);
        let f_d = m.decoder_forward(&st, Mode::Eval).unwrap();
        let sizes: Vec<usize> = f_d.iter().map(|t| t.dim(2).unwrap()).collect();
        assert_eq!(sizes, vec![4, 8, 16, 32, 64]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Model::new(tiny(ModelConfig::full()), &Device::Cpu).unwrap();
        assert!(matches!(m.forward(&input(1, 4, 48, 0), Mode::Eval), Err(Error::Shape(_))));
        assert!(matches!(m.forward(&input(1, 3, 64, 0), Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_parameters_give_half_probability() {
        let m = Model::new(tiny(ModelConfig::full()), &Device::Cpu).unwrap();
        let out = m.forward(&input(1, 4, 32, 3), Mode::Eval).unwrap();
        let v = out.fused_probs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&p| p == 0.5));
        let f_e = out.enhancement_sides[0].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(f_e.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn predict_pads_and_crops_arbitrary_sizes() {
        let m = Model::new(tiny(ModelConfig::full()), &Device::Cpu).unwrap();
        m.init_weights(&InitScheme::Xavier, 2).unwrap();
        let x = Tensor::zeros((1, 4, 37, 50), DType::F32, &Device::Cpu).unwrap();
        let p = m.predict_fused(&x).unwrap();
        assert_eq!(p.dims4().unwrap(), (1, 1, 37, 50));
    }

    #[test]
    fn attention_adds_only_gate_parameters() {
        let full = Model::new(ModelConfig::full(), &Device::Cpu).unwrap();
        let base = Model::new(ModelConfig::baseline(), &Device::Cpu).unwrap();
        let c = &ModelConfig::full().encoder_channels;
        // One C→1 gate (weights + bias) per encoder site and per decoder site.
        let enc: usize = c.iter().map(|&k| k + 1).sum();
        let dec: usize = [c[0], c[0], c[1], c[2], c[3]].iter().map(|&k| k + 1).sum();
        assert_eq!(full.parameter_count() - base.parameter_count(), enc + dec);
    }

    #[test]
    fn scalar_variant_has_one_scalar_per_site() {
        let cfg = ModelConfig {
            use_scalar_weight_variant: true,
            ..tiny(ModelConfig::full())
        };
        let m = Model::new(cfg.clone(), &Device::Cpu).unwrap();
        let gates: Vec<_> = m.params().iter().filter(|(_, p)| p.kind == ParamKind::Gate).collect();
        assert_eq!(gates.len(), 2 * cfg.num_scales);
        assert!(gates.iter().all(|(_, p)| p.var.elem_count() == 1));
        let plain = Model::new(ModelConfig::baseline().narrowed(16), &Device::Cpu).unwrap();
        let scalar = Model::new(
            ModelConfig {
                use_scalar_weight_variant: true,
                ..ModelConfig::full().narrowed(16)
            },
            &Device::Cpu,
        )
        .unwrap();
        assert_eq!(scalar.parameter_count(), plain.parameter_count() + 10);
    }
}

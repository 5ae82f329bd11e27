//! Layers shared by the sub-networks.

use candle_core::{Tensor, Var};

use super::params::{ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{conv2d_gemm, instance_norm, sigmoid};

const NORM_EPS: f64 = 1e-5;

/// Whether a forward pass records the autograd graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub(crate) fn param(self, v: &Var) -> Tensor {
        match self {
            Mode::Train => v.as_tensor().clone(),
            Mode::Eval => v.as_tensor().detach(),
        }
    }
}

/// Square convolution, stride 1, "same" zero padding.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: Var,
    bias: Var,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, path: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let weight = store.add(
            format!("{path}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            ParamKind::ConvWeight { fan_in, fan_out },
        )?;
        let bias = store.add(format!("{path}.bias"), &[out_channels], ParamKind::Bias)?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let w = mode.param(&self.weight);
        let b = mode.param(&self.bias).reshape((1, self.out_channels, 1, 1))?;
        // Training goes through the matrix-product form, whose backward pass
        // is far cheaper than candle's.
        let y = match mode {
            Mode::Train => conv2d_gemm(x, &w)?,
            Mode::Eval => x.conv2d(&w, self.kernel / 2, 1, 1, 1)?,
        };
        Ok(y.broadcast_add(&b)?)
    }
}

/// 3×3 convolution → optional instance norm → ReLU.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    conv: Conv,
    norm: bool,
}

impl ConvUnit {
    pub fn new(store: &mut ParamStore, path: &str, cin: usize, cout: usize, norm: bool) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, path, cin, cout, 3)?,
            norm,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.conv.forward(x, mode)?;
        let y = if self.norm { instance_norm(&y, NORM_EPS)? } else { y };
        Ok(y.relu()?)
    }
}

/// A stack of [`ConvUnit`]s.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    units: Vec<ConvUnit>,
}

impl ConvBlock {
    /// `widths` lists the channel count before the first and after every unit.
    pub fn new(store: &mut ParamStore, path: &str, widths: &[usize], norm: bool) -> Result<Self> {
        let units = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| ConvUnit::new(store, &format!("{path}.conv{}", i + 1), w[0], w[1], norm))
            .collect::<Result<_>>()?;
        Ok(Self { units })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.units.iter().try_fold(x.clone(), |h, u| u.forward(&h, mode))
    }
}

#[derive(Debug, Clone)]
enum Gate {
    /// 1×1 convolution to one channel.
    Filter(Conv),
    /// One trainable scalar shared by the whole block.
    Scalar(Var),
}

/// Output of an attention module.
#[derive(Debug, Clone)]
pub struct Attended {
    /// Soft mask in (0, 1), one channel (broadcast constant for the scalar gate).
    pub mask: Tensor,
    /// Mask applied to every input channel.
    pub gated: Tensor,
    /// Refined side map.
    pub refined: Tensor,
}

/// Scale-space attention: `F_a = σ(Conv¹(F)) ⊙ F`, `F_r = Conv²(F_a)`.
#[derive(Debug, Clone)]
pub struct Attention {
    gate: Gate,
    refine: Conv,
}

impl Attention {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize, out_channels: usize, scalar_gate: bool) -> Result<Self> {
        let gate = if scalar_gate {
            Gate::Scalar(store.add(format!("{path}.gate.scalar"), &[1], ParamKind::Gate)?)
        } else {
            Gate::Filter(Conv::new(store, &format!("{path}.gate"), channels, 1, 1)?)
        };
        let refine = Conv::new(store, &format!("{path}.refine"), channels, out_channels, 1)?;
        Ok(Self { gate, refine })
    }

    pub fn channels(&self) -> usize {
        self.refine.in_channels()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Attended> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "attention module expects {} channels, got {c}",
                self.channels()
            )));
        }
        let mask = match &self.gate {
            Gate::Filter(conv) => sigmoid(&conv.forward(x, mode)?)?,
            Gate::Scalar(s) => sigmoid(&mode.param(s))?
                .reshape((1, 1, 1, 1))?
                .broadcast_as((n, 1, h, w))?,
        };
        let gated = x.broadcast_mul(&mask)?;
        let refined = self.refine.forward(&gated, mode)?;
        Ok(Attended { mask, gated, refined })
    }
}

/// Where a block's output splits into the trunk and a side map.
#[derive(Debug, Clone)]
pub enum SiteHead {
    Attention(Attention),
    /// No attention: the trunk passes through and a 1×1 projection makes the side map.
    Plain(Conv),
}

impl SiteHead {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        channels: usize,
        out_channels: usize,
        attention: bool,
        scalar_gate: bool,
    ) -> Result<Self> {
        if attention {
            Ok(Self::Attention(Attention::new(
                store,
                &format!("{path}.attn"),
                channels,
                out_channels,
                scalar_gate,
            )?))
        } else {
            Ok(Self::Plain(Conv::new(store, &format!("{path}.side"), channels, out_channels, 1)?))
        }
    }

    /// Returns `(trunk, side, mask)`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor, Option<Tensor>)> {
        match self {
            Self::Attention(a) => {
                let out = a.forward(x, mode)?;
                Ok((out.gated, out.refined, Some(out.mask)))
            }
            Self::Plain(p) => Ok((x.clone(), p.forward(x, mode)?, None)),
        }
    }
}

/// Learned single-channel ×`factor` upsampling by transposed convolution.
#[derive(Debug, Clone)]
pub struct Upsampler {
    weight: Var,
    bias: Var,
    factor: usize,
}

impl Upsampler {
    pub fn new(store: &mut ParamStore, path: &str, factor: usize) -> Result<Self> {
        if factor != 1 && factor % 2 != 0 {
            return Err(Error::InvalidArgument(format!("upsampling factor {factor} must be 1 or even")));
        }
        let k = if factor == 1 { 1 } else { 2 * factor };
        let weight = store.add(format!("{path}.weight"), &[1, 1, k, k], ParamKind::Upsample { factor })?;
        let bias = store.add(format!("{path}.bias"), &[1], ParamKind::Bias)?;
        Ok(Self { weight, bias, factor })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = mode.param(&self.weight);
        let b = mode.param(&self.bias).reshape((1, 1, 1, 1))?;
        let y = if self.factor == 1 {
            x.conv_transpose2d(&w, 0, 0, 1, 1)?
        } else {
            x.conv_transpose2d(&w, self.factor / 2, 0, self.factor, 1)?
        };
        Ok(y.broadcast_add(&b)?)
    }
}

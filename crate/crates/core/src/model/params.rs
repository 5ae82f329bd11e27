//! Named trainable parameters and their initialisation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bilinear_kernel, glorot_bound};

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize, fan_out: usize },
    Bias,
    /// Scalar attention gate.
    Gate,
    /// Transposed-convolution kernel for ×`factor` upsampling.
    Upsample { factor: usize },
}

#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    pub kind: ParamKind,
}

/// Parameters keyed by layer path, iterated in lexicographic order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        Self {
            params: BTreeMap::new(),
            device,
            dtype,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Registers a zero-valued parameter.
    pub(crate) fn add(&mut self, name: String, shape: &[usize], kind: ParamKind) -> Result<Var> {
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let var = Var::zeros(shape, self.dtype, &self.device)?;
        self.params.insert(
            name,
            Param {
                var: var.clone(),
                kind,
            },
        );
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.var.elem_count()).sum()
    }

    /// All parameters flattened into one vector, in key order.
    pub fn flat_values(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for p in self.params.values() {
            out.extend(p.var.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    /// Overwrites a parameter, checking the shape.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        if p.var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, value has {:?}",
                p.var.dims(),
                value.dims()
            )));
        }
        p.var.set(&value.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        Ok(())
    }

    /// Glorot-uniform convolution weights, zero biases and gates, bilinear
    /// upsampling kernels. Values are drawn in key order from a seeded stream.
    pub fn init_xavier(&self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, p) in &self.params {
            let n = p.var.elem_count();
            let values: Vec<f64> = match p.kind {
                ParamKind::ConvWeight { fan_in, fan_out } => {
                    let b = glorot_bound(fan_in, fan_out);
                    (0..n).map(|_| rng.random_range(-b..b)).collect()
                }
                ParamKind::Bias | ParamKind::Gate => vec![0.0; n],
                ParamKind::Upsample { factor } => {
                    let k = if factor == 1 { vec![1.0] } else { bilinear_kernel(factor) };
                    if k.len() != n {
                        return Err(Error::Shape(format!("upsampling kernel `{name}` has {n} entries")));
                    }
                    k
                }
            };
            let t = Tensor::from_vec(values, p.var.shape(), &self.device)?;
            self.set(name, &t)?;
        }
        Ok(())
    }
}

/// Weight initialisation scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// `xavier` or `pretrained-encoder`.
    pub scheme: String,
    /// Checkpoint providing encoder weights for `pretrained-encoder`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            scheme: "xavier".into(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitScheme {
    Xavier,
    PretrainedEncoder(PathBuf),
}

impl InitScheme {
    pub fn from_config(cfg: &InitConfig) -> Result<Self> {
        match cfg.scheme.as_str() {
            "" | "xavier" => Ok(Self::Xavier),
            "pretrained-encoder" => cfg
                .checkpoint
                .clone()
                .map(Self::PretrainedEncoder)
                .ok_or_else(|| Error::Config("pretrained-encoder init needs init.checkpoint".into())),
            other => Err(Error::Config(format!("unknown init scheme `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_is_seeded_and_bounded() {
        let build = || {
            let mut s = ParamStore::new(Device::Cpu, DType::F32);
            s.add("c.weight".into(), &[8, 4, 3, 3], ParamKind::ConvWeight { fan_in: 36, fan_out: 72 })
                .unwrap();
            s.add("c.bias".into(), &[8], ParamKind::Bias).unwrap();
            s
        };
        let (a, b) = (build(), build());
        a.init_xavier(7).unwrap();
        b.init_xavier(7).unwrap();
        assert_eq!(a.flat_values().unwrap(), b.flat_values().unwrap());
        let bound = glorot_bound(36, 72);
        let w = a.flat_values().unwrap();
        assert!(w[8..].iter().all(|v| v.abs() <= bound));
        assert!(w[..8].iter().all(|&v| v == 0.0), "bias sorts first and is zero");
        b.init_xavier(8).unwrap();
        assert_ne!(a.flat_values().unwrap(), b.flat_values().unwrap());
    }

    #[test]
    fn unknown_scheme_is_rejected() {
        let cfg = InitConfig {
            scheme: "he-normal".into(),
            checkpoint: None,
        };
        assert!(InitScheme::from_config(&cfg).is_err());
        let cfg = InitConfig {
            scheme: "pretrained-encoder".into(),
            checkpoint: None,
        };
        assert!(InitScheme::from_config(&cfg).is_err());
    }
}

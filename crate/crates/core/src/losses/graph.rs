//! Bridges the hand-differentiated objective into candle's autograd.

use std::sync::{Arc, Mutex};

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};

use super::{total_loss_maps, LossConfig};
use crate::error::{Error, Result};
use crate::model::ForwardOutput;

/// Scalar summary of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSummary {
    pub total: f64,
    pub pixel: f64,
    pub overlap: f64,
}

struct Objective {
    target: Arc<Vec<u8>>,
    cfg: LossConfig,
    /// Gradient computed by the forward pass, laid out like the input.
    cache: Arc<Mutex<Option<(LossSummary, Vec<f64>)>>>,
}

impl Objective {
    fn evaluate(&self, data: &[f64], dims: (usize, usize, usize, usize)) -> candle_core::Result<(LossSummary, Vec<f64>)> {
        let (n, maps, h, w) = dims;
        let plane = h * w;
        // Regroup (N, S+1, H, W) into one batch-contiguous vector per map.
        let mut per_map = vec![Vec::with_capacity(n * plane); maps];
        for (i, chunk) in data.chunks_exact(plane).enumerate() {
            per_map[i % maps].extend_from_slice(chunk);
        }
        let (fused, scales) = per_map.split_last().expect("at least one map");
        let scale_refs: Vec<&[f64]> = scales.iter().map(Vec::as_slice).collect();
        let b = total_loss_maps(fused, &scale_refs, &self.target, plane, &self.cfg)
            .map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        let mut grad = vec![0.0; data.len()];
        for (i, chunk) in grad.chunks_exact_mut(plane).enumerate() {
            let (img, map) = (i / maps, i % maps);
            let src = if map + 1 == maps {
                &b.grad_fused
            } else {
                &b.grad_scales[map]
            };
            chunk.copy_from_slice(&src[img * plane..(img + 1) * plane]);
        }
        let summary = LossSummary {
            total: b.total,
            pixel: b.pixel,
            overlap: b.overlap,
        };
        Ok((summary, grad))
    }
}

impl CustomOp1 for Objective {
    fn name(&self) -> &'static str {
        "scnet-objective"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l.shape().dims4()?;
        let Some((start, end)) = l.contiguous_offsets() else {
            candle_core::bail!("objective expects a contiguous input");
        };
        let data: Vec<f64> = match s {
            CpuStorage::F32(v) => v[start..end].iter().map(|&x| x as f64).collect(),
            CpuStorage::F64(v) => v[start..end].to_vec(),
            _ => candle_core::bail!("objective: unsupported dtype {:?}", s.dtype()),
        };
        let (summary, grad) = self.evaluate(&data, dims)?;
        *self.cache.lock().expect("objective cache poisoned") = Some((summary, grad));
        let out = match s.dtype() {
            DType::F32 => CpuStorage::F32(vec![summary.total as f32]),
            _ => CpuStorage::F64(vec![summary.total]),
        };
        Ok((out, Shape::from(())))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let upstream = grad_res.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let cached = self.cache.lock().expect("objective cache poisoned").clone();
        let grad = match cached {
            Some((_, g)) => g,
            None => {
                let data = arg.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
                self.evaluate(&data, arg.dims4()?)?.1
            }
        };
        let scaled: Vec<f64> = grad.into_iter().map(|g| g * upstream).collect();
        let t = Tensor::from_vec(scaled, arg.shape(), arg.device())?.to_dtype(arg.dtype())?;
        Ok(Some(t))
    }
}

/// Builds the objective as a scalar node of the autograd graph.
///
/// `target` holds the binary masks of the batch, image after image, each the
/// spatial size of the logit maps.
pub fn objective(
    scale_logits: &[Tensor],
    fused_logits: &Tensor,
    target: &[u8],
    cfg: &LossConfig,
) -> Result<(Tensor, LossSummary)> {
    let mut maps: Vec<Tensor> = scale_logits.to_vec();
    maps.push(fused_logits.clone());
    let stacked = Tensor::cat(&maps, 1)?.contiguous()?;
    let (n, channels, h, w) = stacked.dims4()?;
    if channels != scale_logits.len() + 1 {
        return Err(Error::Shape(format!(
            "logit maps must have one channel each, stacked to {channels}"
        )));
    }
    if target.len() != n * h * w {
        return Err(Error::Shape(format!(
            "target has {} pixels, batch has {}",
            target.len(),
            n * h * w
        )));
    }
    let cache = Arc::new(Mutex::new(None));
    let op = Objective {
        target: Arc::new(target.to_vec()),
        cfg: cfg.clone(),
        cache: cache.clone(),
    };
    let loss = stacked.apply_op1(op)?;
    let summary = cache
        .lock()
        .expect("objective cache poisoned")
        .as_ref()
        .map(|(s, _)| *s)
        .ok_or_else(|| Error::InvalidArgument("objective was not evaluated".into()))?;
    Ok((loss, summary))
}

/// [`objective`] applied to a model output.
pub fn total_loss(out: &ForwardOutput, target: &[u8], cfg: &LossConfig) -> Result<(Tensor, LossSummary)> {
    objective(&out.scale_logits, &out.fused_logits, target, cfg)
}

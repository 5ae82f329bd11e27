//! Tensor operations the network needs beyond what candle ships with.
//!
//! Bilinear resizing, 2×2 max pooling that records argmax positions, and
//! index-driven unpooling are implemented as custom ops with explicit
//! adjoints so that they take part in backpropagation. Each op runs on the
//! CPU for `f32` and `f64` tensors.

use std::sync::Arc;

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor, WithDType};

use crate::error::{Error, Result};

fn contiguous<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [T]> {
    let data = T::cpu_storage_as_slice(s)?;
    match l.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("custom op expects a contiguous input"),
    }
}

macro_rules! dispatch_float {
    ($op:expr, $storage:expr, $layout:expr, $run:ident) => {
        match $storage.dtype() {
            DType::F32 => $op.$run::<f32>($storage, $layout),
            DType::F64 => $op.$run::<f64>($storage, $layout),
            dt => candle_core::bail!("{}: unsupported dtype {dt:?}", $op.name()),
        }
    };
}

/// Source taps of one output coordinate along a single axis.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-centred bilinear taps (the `align_corners = false` convention).
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct BilinearResize {
    out_h: usize,
    out_w: usize,
}

impl BilinearResize {
    fn run<T: WithDType>(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = l.shape().dims4()?;
        let src = contiguous::<T>(s, l)?;
        let ty = bilinear_taps(h, self.out_h);
        let tx = bilinear_taps(w, self.out_w);
        let mut out = Vec::with_capacity(n * c * self.out_h * self.out_w);
        for plane in src.chunks_exact(h * w) {
            for y in &ty {
                let fy = T::from_f64(y.frac);
                let gy = T::from_f64(1.0 - y.frac);
                let r0 = &plane[y.lo * w..(y.lo + 1) * w];
                let r1 = &plane[y.hi * w..(y.hi + 1) * w];
                for x in &tx {
                    let fx = T::from_f64(x.frac);
                    let gx = T::from_f64(1.0 - x.frac);
                    let top = gx * r0[x.lo] + fx * r0[x.hi];
                    let bottom = gx * r1[x.lo] + fx * r1[x.hi];
                    out.push(gy * top + fy * bottom);
                }
            }
        }
        Ok((T::to_cpu_storage_owned(out), Shape::from((n, c, self.out_h, self.out_w))))
    }
}

impl CustomOp1 for BilinearResize {
    fn name(&self) -> &'static str {
        "bilinear-resize"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_float!(self, s, l, run)
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (_, _, in_h, in_w) = arg.dims4()?;
        let g = grad.contiguous()?.apply_op1_no_bwd(&BilinearResizeAdjoint { in_h, in_w })?;
        Ok(Some(g))
    }
}

/// Transpose of [`BilinearResize`]: scatters each output gradient back onto
/// the four source pixels with the forward weights.
#[derive(Debug, Clone, Copy)]
struct BilinearResizeAdjoint {
    in_h: usize,
    in_w: usize,
}

impl BilinearResizeAdjoint {
    fn run<T: WithDType>(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, out_h, out_w) = l.shape().dims4()?;
        let grad = contiguous::<T>(s, l)?;
        let (h, w) = (self.in_h, self.in_w);
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let mut out = vec![T::zero(); n * c * h * w];
        for (g_plane, o_plane) in grad.chunks_exact(out_h * out_w).zip(out.chunks_exact_mut(h * w)) {
            for (oy, y) in ty.iter().enumerate() {
                let fy = T::from_f64(y.frac);
                let gy = T::from_f64(1.0 - y.frac);
                for (ox, x) in tx.iter().enumerate() {
                    let fx = T::from_f64(x.frac);
                    let gx = T::from_f64(1.0 - x.frac);
                    let g = g_plane[oy * out_w + ox];
                    o_plane[y.lo * w + x.lo] += g * gy * gx;
                    o_plane[y.lo * w + x.hi] += g * gy * fx;
                    o_plane[y.hi * w + x.lo] += g * fy * gx;
                    o_plane[y.hi * w + x.hi] += g * fy * fx;
                }
            }
        }
        Ok((T::to_cpu_storage_owned(out), Shape::from((n, c, h, w))))
    }
}

impl CustomOp1 for BilinearResizeAdjoint {
    fn name(&self) -> &'static str {
        "bilinear-resize-adjoint"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_float!(self, s, l, run)
    }
}

/// Bilinearly resamples an `(N, C, H, W)` tensor to `(N, C, out_h, out_w)`.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be non-empty".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    Ok(x.contiguous()?.apply_op1(BilinearResize { out_h, out_w })?)
}

/// Argmax positions of a 2×2 stride-2 max pooling.
///
/// Each entry is the row-major offset (`dy * 2 + dx`) of the winning pixel
/// within its window. Ties resolve to the first position in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pooled: (usize, usize, usize, usize),
    offsets: Arc<Vec<u8>>,
}

impl PoolIndices {
    /// Shape `(N, C, H, W)` of the pooled map these indices belong to.
    pub fn pooled_dims(&self) -> (usize, usize, usize, usize) {
        self.pooled
    }

    pub fn offsets(&self) -> &[u8] {
        &self.offsets
    }

    /// Full-resolution `(row, col)` selected for pooled cell `(row, col)` of plane `plane`.
    pub fn source_position(&self, plane: usize, row: usize, col: usize) -> (usize, usize) {
        let (_, _, h, w) = self.pooled;
        let off = self.offsets[plane * h * w + row * w + col] as usize;
        (2 * row + off / 2, 2 * col + off % 2)
    }
}

fn window_argmax<T: WithDType>(data: &[T], planes: usize, h: usize, w: usize) -> Vec<u8> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ph * pw);
    for plane in data.chunks_exact(h * w) {
        for py in 0..ph {
            for px in 0..pw {
                let base = 2 * py * w + 2 * px;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = 0u8;
                for (k, &pos) in cand.iter().enumerate().skip(1) {
                    if plane[pos] > plane[cand[best as usize]] {
                        best = k as u8;
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

/// 2×2 stride-2 max pooling that also returns the argmax indices.
pub fn max_pool_with_indices(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pooling needs even spatial size, got {h}x{w}")));
    }
    let flat = x.detach().flatten_all()?;
    let offsets = match x.dtype() {
        DType::F32 => window_argmax(&flat.to_vec1::<f32>()?, n * c, h, w),
        DType::F64 => window_argmax(&flat.to_vec1::<f64>()?, n * c, h, w),
        dt => return Err(Error::InvalidArgument(format!("max pooling: unsupported dtype {dt:?}"))),
    };
    let indices = PoolIndices {
        pooled: (n, c, h / 2, w / 2),
        offsets: Arc::new(offsets),
    };
    let pooled = x.contiguous()?.apply_op1(WindowSelect {
        indices: indices.clone(),
    })?;
    Ok((pooled, indices))
}

/// Places each value at its recorded argmax position, zeros elsewhere.
pub fn unpool(x: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    let dims = x.dims4()?;
    if dims != indices.pooled {
        return Err(Error::Shape(format!(
            "unpool input {:?} does not match index grid {:?}",
            dims, indices.pooled
        )));
    }
    Ok(x.contiguous()?.apply_op1(Unpool {
        indices: indices.clone(),
    })?)
}

#[derive(Debug, Clone)]
struct WindowSelect {
    indices: PoolIndices,
}

impl WindowSelect {
    fn run<T: WithDType>(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = l.shape().dims4()?;
        let (pn, pc, ph, pw) = self.indices.pooled;
        if (n, c, h / 2, w / 2) != (pn, pc, ph, pw) || h % 2 != 0 || w % 2 != 0 {
            candle_core::bail!("window-select: input {:?} does not match index grid", (n, c, h, w));
        }
        let src = contiguous::<T>(s, l)?;
        let offs = self.indices.offsets();
        let mut out = Vec::with_capacity(n * c * ph * pw);
        for (p, plane) in src.chunks_exact(h * w).enumerate() {
            for py in 0..ph {
                for px in 0..pw {
                    let off = offs[p * ph * pw + py * pw + px] as usize;
                    out.push(plane[(2 * py + off / 2) * w + 2 * px + off % 2]);
                }
            }
        }
        Ok((T::to_cpu_storage_owned(out), Shape::from((n, c, ph, pw))))
    }
}

impl CustomOp1 for WindowSelect {
    fn name(&self) -> &'static str {
        "window-select"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_float!(self, s, l, run)
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = grad.contiguous()?.apply_op1_no_bwd(&Unpool {
            indices: self.indices.clone(),
        })?;
        Ok(Some(g))
    }
}

#[derive(Debug, Clone)]
struct Unpool {
    indices: PoolIndices,
}

impl Unpool {
    fn run<T: WithDType>(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l.shape().dims4()?;
        if dims != self.indices.pooled {
            candle_core::bail!("unpool: input {dims:?} does not match index grid");
        }
        let (n, c, ph, pw) = dims;
        let (h, w) = (2 * ph, 2 * pw);
        let src = contiguous::<T>(s, l)?;
        let offs = self.indices.offsets();
        let mut out = vec![T::zero(); n * c * h * w];
        for (p, (plane, o_plane)) in src
            .chunks_exact(ph * pw)
            .zip(out.chunks_exact_mut(h * w))
            .enumerate()
        {
            for py in 0..ph {
                for px in 0..pw {
                    let k = py * pw + px;
                    let off = offs[p * ph * pw + k] as usize;
                    o_plane[(2 * py + off / 2) * w + 2 * px + off % 2] = plane[k];
                }
            }
        }
        Ok((T::to_cpu_storage_owned(out), Shape::from((n, c, h, w))))
    }
}

impl CustomOp1 for Unpool {
    fn name(&self) -> &'static str {
        "max-unpool"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_float!(self, s, l, run)
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = grad.contiguous()?.apply_op1_no_bwd(&WindowSelect {
            indices: self.indices.clone(),
        })?;
        Ok(Some(g))
    }
}

#[derive(Debug, Clone, Copy)]
struct Sigmoid;

impl Sigmoid {
    fn run<T: WithDType>(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let src = contiguous::<T>(s, l)?;
        let out = src
            .iter()
            .map(|&v| {
                let u = v.to_f64();
                let p = if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                };
                T::from_f64(p)
            })
            .collect();
        Ok((T::to_cpu_storage_owned(out), l.shape().clone()))
    }
}

impl CustomOp1 for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_float!(self, s, l, run)
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let res = res.detach();
        let slope = (&res * (1.0 - &res)?)?;
        Ok(Some(grad.mul(&slope)?))
    }
}

/// Logistic function `1 / (1 + e^{-x})`, evaluated without overflow.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Sigmoid)?)
}

/// Unfolds `k`×`k` patches ("same" zero padding, stride 1) of an
/// `(N, C, H, W)` tensor into a `(C·k·k, N·H·W)` matrix, so that a
/// convolution becomes one matrix product.
#[derive(Debug, Clone, Copy)]
struct Im2Col {
    k: usize,
}

impl Im2Col {
    fn run<T: WithDType>(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = l.shape().dims4()?;
        let src = contiguous::<T>(s, l)?;
        let (k, pad) = (self.k, self.k / 2);
        let cols = n * h * w;
        let mut out = vec![T::zero(); c * k * k * cols];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut out[((ci * k + ky) * k + kx) * cols..][..cols];
                    for b in 0..n {
                        let plane = &src[(b * c + ci) * h * w..][..h * w];
                        for y in 0..h {
                            let sy = y + ky;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let src_row = &plane[(sy - pad) * w..][..w];
                            let dst = &mut row[(b * h + y) * w..][..w];
                            // Output column x reads source column x + kx - pad.
                            let lo = pad.saturating_sub(kx);
                            let hi = (w + pad).saturating_sub(kx).min(w);
                            if lo < hi {
                                dst[lo..hi].copy_from_slice(&src_row[lo + kx - pad..hi + kx - pad]);
                            }
                        }
                    }
                }
            }
        }
        Ok((T::to_cpu_storage_owned(out), Shape::from((c * k * k, cols))))
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_float!(self, s, l, run)
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dims = arg.dims4()?;
        let g = grad.contiguous()?.apply_op1_no_bwd(&Col2Im { k: self.k, dims })?;
        Ok(Some(g))
    }
}

/// Adjoint of [`Im2Col`]: sums every patch entry back onto its pixel.
#[derive(Debug, Clone, Copy)]
struct Col2Im {
    k: usize,
    dims: (usize, usize, usize, usize),
}

impl Col2Im {
    fn run<T: WithDType>(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = self.dims;
        let (k, pad) = (self.k, self.k / 2);
        let cols = n * h * w;
        if l.shape().dims() != [c * k * k, cols] {
            candle_core::bail!("col2im: input {:?} does not match {:?}", l.shape(), self.dims);
        }
        let src = contiguous::<T>(s, l)?;
        let mut out = vec![T::zero(); n * c * h * w];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &src[((ci * k + ky) * k + kx) * cols..][..cols];
                    for b in 0..n {
                        let plane = &mut out[(b * c + ci) * h * w..][..h * w];
                        for y in 0..h {
                            let sy = y + ky;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let dst_row = &mut plane[(sy - pad) * w..][..w];
                            let g = &row[(b * h + y) * w..][..w];
                            let lo = pad.saturating_sub(kx);
                            let hi = (w + pad).saturating_sub(kx).min(w);
                            for x in lo..hi {
                                dst_row[x + kx - pad] += g[x];
                            }
                        }
                    }
                }
            }
        }
        Ok((T::to_cpu_storage_owned(out), Shape::from(self.dims)))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_float!(self, s, l, run)
    }
}

/// Stride-1 "same" convolution as patch unfolding plus one matrix product.
///
/// Numerically equivalent to `conv2d`, but both gradients are plain matrix
/// products, which is much faster to backpropagate on the CPU.
pub fn conv2d_gemm(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (co, ci, k, k2) = weight.dims4()?;
    if ci != c || k != k2 || k % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv2d_gemm: input {:?} and odd square kernel expected, weight is {:?}",
            (n, c, h, w),
            (co, ci, k, k2)
        )));
    }
    let cols = if k == 1 {
        x.transpose(0, 1)?.contiguous()?.reshape((c, n * h * w))?
    } else {
        x.contiguous()?.apply_op1(Im2Col { k })?
    };
    let y = weight.reshape((co, c * k * k))?.matmul(&cols)?;
    Ok(y.reshape((co, n, h, w))?.transpose(0, 1)?.contiguous()?)
}

/// Per-sample, per-channel normalisation over the spatial dimensions (no affine term).
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// Glorot/Xavier uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Separable bilinear interpolation kernel of size `2 * factor`, the usual
/// starting point for learned ×`factor` transposed-convolution upsampling.
pub fn bilinear_kernel(factor: usize) -> Vec<f64> {
    let size = 2 * factor;
    let center = if size % 2 == 1 {
        factor as f64 - 1.0
    } else {
        factor as f64 - 0.5
    };
    let mut k = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let wy = 1.0 - (y as f64 - center).abs() / factor as f64;
            let wx = 1.0 - (x as f64 - center).abs() / factor as f64;
            k.push(wy * wx);
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn t4(data: &[f64], dims: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_slice(data, dims, &Device::Cpu).unwrap()
    }

    #[test]
    fn unpool_places_value_at_recorded_corner() {
        let x = t4(&[5.0, 1.0, 2.0, 3.0], (1, 1, 2, 2));
        let (p, idx) = max_pool_with_indices(&x).unwrap();
        assert_eq!(p.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![5.0]);
        assert_eq!(idx.offsets(), &[0]);
        let u = unpool(&p, &idx).unwrap();
        assert_eq!(u.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_pick_first_row_major_position() {
        let x = t4(&[0.0; 16], (1, 1, 4, 4));
        let (_, idx) = max_pool_with_indices(&x).unwrap();
        assert!(idx.offsets().iter().all(|&o| o == 0));
        let x = t4(&[1.0, 2.0, 2.0, 0.0], (1, 1, 2, 2));
        let (_, idx) = max_pool_with_indices(&x).unwrap();
        assert_eq!(idx.offsets(), &[1]);
    }

    #[test]
    fn indices_stay_inside_their_window() {
        let data: Vec<f64> = (0..2 * 3 * 8 * 6).map(|i| ((i * 7919) % 97) as f64).collect();
        let x = t4(&data, (2, 3, 8, 6));
        let (_, idx) = max_pool_with_indices(&x).unwrap();
        assert_eq!(idx.pooled_dims(), (2, 3, 4, 3));
        for p in 0..6 {
            for r in 0..4 {
                for c in 0..3 {
                    let (y, x) = idx.source_position(p, r, c);
                    assert!(y / 2 == r && x / 2 == c);
                }
            }
        }
    }

    #[test]
    fn unpool_rejects_mismatched_grid() {
        let x = t4(&[0.0; 16], (1, 1, 4, 4));
        let (_, idx) = max_pool_with_indices(&x).unwrap();
        let wrong = t4(&[0.0; 9], (1, 1, 3, 3));
        assert!(matches!(unpool(&wrong, &idx), Err(Error::Shape(_))));
    }

    #[test]
    fn odd_sizes_are_rejected_by_pooling() {
        let x = t4(&[0.0; 9], (1, 1, 3, 3));
        assert!(max_pool_with_indices(&x).is_err());
    }

    #[test]
    fn resize_of_constant_field_is_constant() {
        let x = t4(&[3.5; 12], (1, 1, 3, 4));
        let y = resize_bilinear(&x, 6, 8).unwrap();
        for v in y.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_two_x_matches_half_pixel_convention() {
        // 1-D row [0, 4] upsampled to 4 samples: src coords -0.25→0, 0.25, 0.75, 1.25→clamped.
        let x = t4(&[0.0, 4.0], (1, 1, 1, 2));
        let y = resize_bilinear(&x, 1, 4).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(v, vec![0.0, 1.0, 3.0, 4.0]);
    }

    /// `<A x, y> == <x, Aᵀ y>` for each linear op and its adjoint, checked through candle's backward.
    fn adjoint_gap(forward: impl Fn(&Tensor) -> Tensor, x: Vec<f64>, dims: (usize, usize, usize, usize)) -> f64 {
        let var = Var::from_slice(&x, dims, &Device::Cpu).unwrap();
        let y = forward(var.as_tensor());
        let n = y.elem_count();
        let probe: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 13) as f64 - 6.0).collect();
        let probe_t = Tensor::from_slice(&probe, y.shape(), &Device::Cpu).unwrap();
        let lhs = (y.clone() * &probe_t).unwrap().sum_all().unwrap();
        let grads = lhs.backward().unwrap();
        let g = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let lhs = lhs.to_scalar::<f64>().unwrap();
        let rhs: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
        (lhs - rhs).abs()
    }

    #[test]
    fn custom_ops_are_consistent_with_their_adjoints() {
        let dims = (2, 2, 6, 8);
        let x: Vec<f64> = (0..2 * 2 * 6 * 8).map(|i| ((i * 31 + 7) % 17) as f64 * 0.3 - 2.0).collect();
        assert!(adjoint_gap(|t| resize_bilinear(t, 12, 16).unwrap(), x.clone(), dims) < 1e-9);
        assert!(adjoint_gap(|t| resize_bilinear(t, 3, 5).unwrap(), x.clone(), dims) < 1e-9);
        assert!(adjoint_gap(|t| max_pool_with_indices(t).unwrap().0, x.clone(), dims) < 1e-9);
        let idx = max_pool_with_indices(&t4(&x, dims)).unwrap().1;
        let small: Vec<f64> = x[..2 * 2 * 3 * 4].to_vec();
        assert!(adjoint_gap(|t| unpool(t, &idx).unwrap(), small, (2, 2, 3, 4)) < 1e-9);
    }

    #[test]
    fn sigmoid_is_stable_and_differentiable() {
        let var = Var::from_slice(&[-800.0f64, 0.0, 3.0, 800.0], 4, &Device::Cpu).unwrap();
        let y = sigmoid(var.as_tensor()).unwrap();
        let v = y.to_vec1::<f64>().unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 0.5);
        assert_eq!(v[3], 1.0);
        let g = y.sum_all().unwrap().backward().unwrap();
        let g = g.get(var.as_tensor()).unwrap().to_vec1::<f64>().unwrap();
        let s3 = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((g[2] - s3 * (1.0 - s3)).abs() < 1e-15);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn glorot_bound_closed_form() {
        // 3x3 conv, 64 -> 128 channels.
        let b = glorot_bound(64 * 9, 128 * 9);
        assert!((b - (6.0f64 / 1728.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bilinear_kernel_factor_two() {
        let k = bilinear_kernel(2);
        let row = [0.25, 0.75, 0.75, 0.25];
        for y in 0..4 {
            for x in 0..4 {
                assert!((k[y * 4 + x] - row[y] * row[x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_convolution_matches_conv2d_and_its_gradients() {
        for k in [1usize, 3] {
            let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 3, 5, 4), &Device::Cpu).unwrap()).unwrap();
            let w = Var::from_tensor(&Tensor::randn(0f64, 1.0, (4, 3, k, k), &Device::Cpu).unwrap()).unwrap();
            let a = conv2d_gemm(x.as_tensor(), w.as_tensor()).unwrap();
            let b = x.as_tensor().conv2d(w.as_tensor(), k / 2, 1, 1, 1).unwrap();
            let diff = (&a - &b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert!(diff < 1e-12, "k={k}: {diff}");
            let r = Tensor::randn(0f64, 1.0, a.dims(), &Device::Cpu).unwrap();
            let ga = (&a * &r).unwrap().sum_all().unwrap().backward().unwrap();
            let gb = (&b * &r).unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &w] {
                let d = (ga.get(v.as_tensor()).unwrap() - gb.get(v.as_tensor()).unwrap())
                    .unwrap()
                    .abs()
                    .unwrap()
                    .max_all()
                    .unwrap()
                    .to_scalar::<f64>()
                    .unwrap();
                assert!(d < 1e-10, "k={k}: gradient gap {d}");
            }
        }
    }
}

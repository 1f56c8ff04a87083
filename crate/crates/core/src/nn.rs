//! Neural-network layers with explicit forward and backward passes.
//!
//! Every layer is a pure function. Backward functions take the forward inputs
//! (and parameters) together with the upstream gradient and return gradients
//! shaped exactly like the tensors they differentiate.

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients of one parameterised layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub input: Tensor,
    pub params: BTreeMap<&'static str, Tensor>,
}

impl LayerGrads {
    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    pub fn take_param(&mut self, name: &str) -> Tensor {
        self.params.remove(name).expect("unknown parameter name")
    }
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("stride must be at least 1"));
    }
    if kernel > input + 2 * pad {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {}",
            input + 2 * pad
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// Range of output columns `[lo, hi)` whose input column `o*stride + k - pad` lies in `[0, len)`.
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k {
        ((len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (n, c, h, w) = input.dims4()?;
        let (f, kc, kh, kw) = kernel.dims4()?;
        if kc != c {
            return Err(Error::shape(format!(
                "kernel expects {kc} input channels, input has {c}"
            )));
        }
        let oh = conv_out_dim(h, kh, stride, pad)?;
        let ow = conv_out_dim(w, kw, stride, pad)?;
        Ok(Self { n, c, h, w, f, kh, kw, oh, ow, stride, pad })
    }

    /// Input row for output row `oy` and kernel row `ky`, if inside the image.
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy * self.stride + ky;
        (iy >= self.pad && iy - self.pad < self.h).then(|| iy - self.pad)
    }
}

/// Unfolds one sample `[C,H,W]` into a `[C·kh·kw, oh·ow]` patch matrix.
fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let p = g.oh * g.ow;
    let mut col = vec![0.0; g.c * g.kh * g.kw * p];
    let mut row = 0;
    for c in 0..g.c {
        let xp = &x[c * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                let dst = &mut col[row * p..][..p];
                for oy in 0..g.oh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    let xrow = &xp[iy * g.w..][..g.w];
                    let drow = &mut dst[oy * g.ow..][..g.ow];
                    for ox in lo..hi {
                        drow[ox] = xrow[ox * g.stride + kx - g.pad];
                    }
                }
                row += 1;
            }
        }
    }
    col
}

/// Scatter-adds a patch-matrix gradient back onto one sample `[C,H,W]`.
fn col2im(col: &[f64], g: &ConvGeometry, gx: &mut [f64]) {
    let p = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.c {
        let gp = &mut gx[c * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                let src = &col[row * p..][..p];
                for oy in 0..g.oh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    let grow = &mut gp[iy * g.w..][..g.w];
                    let srow = &src[oy * g.ow..][..g.ow];
                    for ox in lo..hi {
                        grow[ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

impl ConvGeometry {
    /// A 1×1, stride-1, unpadded conv reads its input plane directly as the patch matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patches<'a>(&self, x: &'a [f64]) -> Cow<'a, [f64]> {
        if self.is_pointwise() {
            Cow::Borrowed(x)
        } else {
            Cow::Owned(im2col(x, self))
        }
    }
}

/// Dot product with four independent partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Output columns processed together so a patch-matrix block stays cache resident.
const COLUMN_BLOCK: usize = 256;

/// 2-D cross-correlation with zero padding.
///
/// `input` is `[N,C,H,W]`, `kernel` is `[F,C,kh,kw]`, `bias` is `[F]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel, stride, pad)?;
    if bias.len() != g.f {
        return Err(Error::shape(format!("bias has {} entries for {} filters", bias.len(), g.f)));
    }
    let k_len = g.c * g.kh * g.kw;
    let p = g.oh * g.ow;
    let plane_in = g.c * g.h * g.w;
    let kernel = kernel.data();
    let mut out = vec![0.0; g.n * g.f * p];
    for n in 0..g.n {
        let col = g.patches(&input.data()[n * plane_in..][..plane_in]);
        let o = &mut out[n * g.f * p..][..g.f * p];
        for start in (0..p).step_by(COLUMN_BLOCK) {
            let len = COLUMN_BLOCK.min(p - start);
            for f in 0..g.f {
                let orow = &mut o[f * p + start..][..len];
                orow.fill(bias.data()[f]);
                let wrow = &kernel[f * k_len..][..k_len];
                let rows = |k: usize| &col[k * p + start..][..len];
                let mut k = 0;
                while k + 4 <= k_len {
                    let (w0, w1, w2, w3) = (wrow[k], wrow[k + 1], wrow[k + 2], wrow[k + 3]);
                    let (c0, c1, c2, c3) = (rows(k), rows(k + 1), rows(k + 2), rows(k + 3));
                    for i in 0..len {
                        orow[i] += w0 * c0[i] + w1 * c1[i] + w2 * c2[i] + w3 * c3[i];
                    }
                    k += 4;
                }
                for k in k..k_len {
                    let wv = wrow[k];
                    for (ov, cv) in orow.iter_mut().zip(rows(k)) {
                        *ov += wv * cv;
                    }
                }
            }
        }
    }
    Tensor::new(&[g.n, g.f, g.oh, g.ow], out)
}

/// Backward pass of [`conv2d`]; parameter gradients are named `weight` and `bias`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<LayerGrads> {
    let g = ConvGeometry::new(input, kernel, stride, pad)?;
    if grad_out.shape() != [g.n, g.f, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "upstream gradient {:?} does not match conv output {:?}",
            grad_out.shape(),
            [g.n, g.f, g.oh, g.ow]
        )));
    }
    let k_len = g.c * g.kh * g.kw;
    let p = g.oh * g.ow;
    let plane_in = g.c * g.h * g.w;
    let w = kernel.data();
    let mut gx = vec![0.0; input.len()];
    let mut gk = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.f];
    let mut gcol = vec![0.0; k_len * p];

    for n in 0..g.n {
        let col = g.patches(&input.data()[n * plane_in..][..plane_in]);
        let go = &grad_out.data()[n * g.f * p..][..g.f * p];
        gcol.fill(0.0);
        for start in (0..p).step_by(COLUMN_BLOCK) {
            let len = COLUMN_BLOCK.min(p - start);
            for f in 0..g.f {
                let grow = &go[f * p + start..][..len];
                gb[f] += grow.iter().sum::<f64>();
                for k in 0..k_len {
                    gk[f * k_len + k] += dot(grow, &col[k * p + start..][..len]);
                }
            }
            let grows = |f: usize| &go[f * p + start..][..len];
            for k in 0..k_len {
                let gc = &mut gcol[k * p + start..][..len];
                let mut f = 0;
                while f + 4 <= g.f {
                    let (w0, w1, w2, w3) = (
                        w[f * k_len + k],
                        w[(f + 1) * k_len + k],
                        w[(f + 2) * k_len + k],
                        w[(f + 3) * k_len + k],
                    );
                    let (g0, g1, g2, g3) = (grows(f), grows(f + 1), grows(f + 2), grows(f + 3));
                    for i in 0..len {
                        gc[i] += w0 * g0[i] + w1 * g1[i] + w2 * g2[i] + w3 * g3[i];
                    }
                    f += 4;
                }
                for f in f..g.f {
                    let wv = w[f * k_len + k];
                    for (c, gv) in gc.iter_mut().zip(grows(f)) {
                        *c += wv * gv;
                    }
                }
            }
        }
        let gxn = &mut gx[n * plane_in..][..plane_in];
        if g.is_pointwise() {
            gxn.copy_from_slice(&gcol);
        } else {
            col2im(&gcol, &g, gxn);
        }
    }

    let mut params = BTreeMap::new();
    params.insert("weight", Tensor::new(kernel.shape(), gk)?);
    params.insert("bias", Tensor::new(&[g.f], gb)?);
    Ok(LayerGrads {
        input: Tensor::new(input.shape(), gx)?,
        params,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes the upstream gradient only where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu gradient shape mismatch"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

struct PoolGeometry {
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn pool_geometry(input: &Tensor, k: usize, stride: usize) -> Result<PoolGeometry> {
    let (n, c, h, w) = input.dims4()?;
    if stride == 0 || k == 0 {
        return Err(Error::shape("pool window and stride must be at least 1"));
    }
    if k > h || k > w {
        return Err(Error::shape(format!("pool window {k} larger than input {h}x{w}")));
    }
    Ok(PoolGeometry {
        planes: n * c,
        h,
        w,
        oh: (h - k) / stride + 1,
        ow: (w - k) / stride + 1,
    })
}

/// Index within the plane of the first maximum (row-major scan) of a window.
fn window_argmax(plane: &[f64], w: usize, y0: usize, x0: usize, k: usize) -> usize {
    let mut best = y0 * w + x0;
    for dy in 0..k {
        for dx in 0..k {
            let idx = (y0 + dy) * w + x0 + dx;
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

pub fn pool2d(input: &Tensor, mode: PoolMode, k: usize, stride: usize) -> Result<Tensor> {
    let g = pool_geometry(input, k, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(g.planes * g.oh * g.ow);
    let inv = 1.0 / (k * k) as f64;
    for p in 0..g.planes {
        let plane = &x[p * g.h * g.w..][..g.h * g.w];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let (y0, x0) = (oy * stride, ox * stride);
                out.push(match mode {
                    PoolMode::Max => plane[window_argmax(plane, g.w, y0, x0, k)],
                    PoolMode::Avg => {
                        let mut s = 0.0;
                        for dy in 0..k {
                            for v in &plane[(y0 + dy) * g.w + x0..][..k] {
                                s += v;
                            }
                        }
                        s * inv
                    }
                });
            }
        }
    }
    let shape = input.shape();
    Tensor::new(&[shape[0], shape[1], g.oh, g.ow], out)
}

pub fn pool2d_backward(
    input: &Tensor,
    mode: PoolMode,
    k: usize,
    stride: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let g = pool_geometry(input, k, stride)?;
    if grad_out.len() != g.planes * g.oh * g.ow {
        return Err(Error::shape("pool gradient shape mismatch"));
    }
    let x = input.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let inv = 1.0 / (k * k) as f64;
    for p in 0..g.planes {
        let plane = &x[p * g.h * g.w..][..g.h * g.w];
        let gplane = &mut gx[p * g.h * g.w..][..g.h * g.w];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let gv = go[(p * g.oh + oy) * g.ow + ox];
                let (y0, x0) = (oy * stride, ox * stride);
                match mode {
                    PoolMode::Max => gplane[window_argmax(plane, g.w, y0, x0, k)] += gv,
                    PoolMode::Avg => {
                        for dy in 0..k {
                            for v in &mut gplane[(y0 + dy) * g.w + x0..][..k] {
                                *v += gv * inv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input.shape(), gx)
}

/// Concatenates `[N,Ci,H,W]` tensors along the channel axis in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("concat of an empty list"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total_c = 0;
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::shape(format!(
                "cannot concat {:?} with {:?}",
                t.shape(),
                first.shape()
            )));
        }
        total_c += tc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total_c * plane);
    for b in 0..n {
        for t in inputs {
            let c = t.shape()[1];
            out.extend_from_slice(&t.data()[b * c * plane..][..c * plane]);
        }
    }
    Tensor::new(&[n, total_c, h, w], out)
}

/// Inverse of [`concat_channels`]: splits a tensor into pieces with the given channel counts.
pub fn split_channels(input: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = input.dims4()?;
    if channels.iter().sum::<usize>() != c {
        return Err(Error::shape(format!(
            "channel split {channels:?} does not sum to {c}"
        )));
    }
    let plane = h * w;
    let mut parts: Vec<Vec<f64>> = channels
        .iter()
        .map(|&ci| Vec::with_capacity(n * ci * plane))
        .collect();
    for b in 0..n {
        let mut offset = b * c * plane;
        for (part, &ci) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&input.data()[offset..][..ci * plane]);
            offset += ci * plane;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &ci)| Tensor::new(&[n, ci, h, w], data))
        .collect()
}

/// Per-channel spatial mean: `[N,C,H,W]` to `[N,C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let data = input
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(&[n, c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_shape[..] else {
        return Err(Error::shape("global_avg_pool expects rank-4 input"));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::shape("global_avg_pool gradient shape mismatch"));
    }
    let plane = h * w;
    let scale = 1.0 / plane as f64;
    let mut data = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat(g * scale).take(plane));
    }
    Tensor::new(input_shape, data)
}

/// Affine map `x · Wᵀ + b` with `x: [N,D]`, `W: [K,D]`, `b: [K]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d) = input.dims2()?;
    let (k, wd) = weight.dims2()?;
    if wd != d || bias.len() != k {
        return Err(Error::shape(format!(
            "linear: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * k);
    for row in input.data().chunks_exact(d) {
        for (wrow, b) in weight.data().chunks_exact(d).zip(bias.data()) {
            out.push(b + row.iter().zip(wrow).map(|(x, w)| x * w).sum::<f64>());
        }
    }
    Tensor::new(&[n, k], out)
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LayerGrads> {
    let (n, d) = input.dims2()?;
    let (k, _) = weight.dims2()?;
    if grad_out.shape() != [n, k] {
        return Err(Error::shape("linear gradient shape mismatch"));
    }
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; n * d];
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            let g = go[i * k + j];
            gb[j] += g;
            for t in 0..d {
                gx[i * d + t] += g * wt[j * d + t];
                gw[j * d + t] += g * x[i * d + t];
            }
        }
    }
    let mut params = BTreeMap::new();
    params.insert("weight", Tensor::new(weight.shape(), gw)?);
    params.insert("bias", Tensor::new(&[k], gb)?);
    Ok(LayerGrads {
        input: Tensor::new(input.shape(), gx)?,
        params,
    })
}

/// Result of [`softmax_cross_entropy`].
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probs: Tensor,
    pub grad_logits: Tensor,
}

/// Row-wise softmax of `[N,K]` logits, stabilised by max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut data = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::new(logits.shape(), data)
}

/// Mean softmax cross-entropy over the batch, with the gradient `(probs − onehot)/N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    let (n, k) = logits.dims2()?;
    if k < 2 {
        return Err(Error::shape("cross-entropy needs at least two classes"));
    }
    if labels.len() != n {
        return Err(Error::input(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::input(format!("label {l} of row {i} outside [0, {k})")));
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    let mut grad = probs.data().to_vec();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..][..k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss -= row[label] - max - log_sum;
        grad[i * k + label] -= 1.0;
    }
    let scale = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(CrossEntropy {
        loss: loss * scale,
        probs,
        grad_logits: Tensor::new(&[n, k], grad)?,
    })
}

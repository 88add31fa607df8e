//! Forward and backward passes of the individual layer kinds.
//!
//! Spatial layers take `N x C x H x W` batches; a bare `C x H x W` input is
//! treated as a batch of one and the result keeps the caller's rank.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

fn as_batch(t: &Tensor, rank: usize, what: &str) -> Result<(Vec<usize>, bool)> {
    match t.dims().len() {
        r if r == rank => Ok((t.dims().to_vec(), false)),
        r if r + 1 == rank => {
            let mut dims = vec![1];
            dims.extend_from_slice(t.dims());
            Ok((dims, true))
        }
        _ => Err(Error::Shape(format!(
            "{what} expects a rank-{rank} batch or rank-{} sample, got dims {:?}",
            rank - 1,
            t.dims()
        ))),
    }
}

fn unbatch(t: Tensor, squeeze: bool) -> Tensor {
    if squeeze {
        let dims = t.dims()[1..].to_vec();
        t.reshape(dims).expect("dropping a unit axis keeps the length")
    } else {
        t
    }
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Shape("kernel and stride must be >= 1".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "input extent {input} (+2x{padding} padding) is smaller than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], weights: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let &[n, c, h, w] = input else {
            unreachable!("input is batched before geometry is built")
        };
        let &[o, wc, k, k2] = weights else {
            return Err(Error::Shape(format!(
                "conv weights must be O x C x k x k, got {weights:?}"
            )));
        };
        if k != k2 {
            return Err(Error::Shape(format!("conv kernel must be square, got {k}x{k2}")));
        }
        if wc != c {
            return Err(Error::Shape(format!(
                "conv weights expect {wc} input channels but the input has {c} (input dims {input:?})"
            )));
        }
        let ho = conv_output_size(h, k, stride, padding)?;
        let wo = conv_output_size(w, k, stride, padding)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            k,
            stride,
            padding,
            ho,
            wo,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// `patch x (n * positions)` matrix of receptive fields.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let cols_n = self.n * self.positions();
        let mut cols = vec![0.0; self.patch() * cols_n];
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for b in 0..self.n {
                        let plane = &input[(b * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for oy in 0..self.ho {
                            let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                            if iy < 0 || iy as usize >= self.h {
                                continue;
                            }
                            let src = &plane[iy as usize * self.w..][..self.w];
                            let dst = &mut dst_row[b * self.positions() + oy * self.wo..][..self.wo];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                                if ix >= 0 && (ix as usize) < self.w {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let cols_n = self.n * self.positions();
        let mut out = vec![0.0; self.n * self.c * self.h * self.w];
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                    for b in 0..self.n {
                        let plane = &mut out[(b * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for oy in 0..self.ho {
                            let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                            if iy < 0 || iy as usize >= self.h {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * self.w..][..self.w];
                            let src = &src_row[b * self.positions() + oy * self.wo..][..self.wo];
                            for (ox, s) in src.iter().enumerate() {
                                let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                                if ix >= 0 && (ix as usize) < self.w {
                                    dst[ix as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Saved by [`conv2d_forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input_dims: Vec<usize>,
    squeeze: bool,
    cols: Vec<f64>,
    stride: usize,
    padding: usize,
}

pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    Ok(conv2d_forward_cached(input, weights, bias, stride, padding)?.0)
}

/// Cross-correlation plus bias.
pub fn conv2d_forward_cached(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, ConvCache)> {
    let (dims, squeeze) = as_batch(input, 4, "conv2d")?;
    let g = ConvGeometry::new(&dims, weights.dims(), stride, padding)?;
    if bias.len() != g.o {
        return Err(Error::Shape(format!(
            "conv bias has {} entries for {} filters",
            bias.len(),
            g.o
        )));
    }
    let cols = g.im2col(input.data());
    let cols_n = g.n * g.positions();
    let mut mat = vec![0.0; g.o * cols_n];
    gemm(
        g.o,
        g.patch(),
        cols_n,
        weights.data(),
        false,
        &cols,
        false,
        &mut mat,
        0.0,
    );

    let p = g.positions();
    let mut out = vec![0.0; g.n * g.o * p];
    for o in 0..g.o {
        let b = bias.data()[o];
        for n in 0..g.n {
            let src = &mat[o * cols_n + n * p..][..p];
            let dst = &mut out[(n * g.o + o) * p..][..p];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    let out = Tensor::new(vec![g.n, g.o, g.ho, g.wo], out)?;
    out.debug_check_finite("conv2d output");
    let cache = ConvCache {
        input_dims: dims,
        squeeze,
        cols,
        stride,
        padding,
    };
    Ok((unbatch(out, squeeze), cache))
}

/// Output channel `o` alone, `N x H' x W'` values (or `H' x W'` for one sample).
pub fn conv2d_forward_channel(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    o: usize,
) -> Result<Vec<f64>> {
    let (dims, _) = as_batch(input, 4, "conv2d")?;
    let g = ConvGeometry::new(&dims, weights.dims(), stride, padding)?;
    if o >= g.o || bias.len() != g.o {
        return Err(Error::Shape(format!(
            "channel {o} of a {}-filter conv with {} biases",
            g.o,
            bias.len()
        )));
    }
    let cols = g.im2col(input.data());
    let cols_n = g.n * g.positions();
    let mut row = vec![bias.data()[o]; cols_n];
    let w = &weights.data()[o * g.patch()..(o + 1) * g.patch()];
    gemm(1, g.patch(), cols_n, w, false, &cols, false, &mut row, 1.0);
    Ok(row)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward(
    grad_out: &Tensor,
    cache: &ConvCache,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeometry::new(&cache.input_dims, weights.dims(), cache.stride, cache.padding)?;
    let expected = [g.n, g.o, g.ho, g.wo];
    let matches = grad_out.dims() == expected || (cache.squeeze && grad_out.dims() == &expected[1..]);
    if !matches {
        return Err(Error::Shape(format!(
            "conv grad_out dims {:?} do not match forward output {expected:?}",
            grad_out.dims()
        )));
    }
    let p = g.positions();
    let cols_n = g.n * p;
    let mut gmat = vec![0.0; g.o * cols_n];
    for n in 0..g.n {
        for o in 0..g.o {
            gmat[o * cols_n + n * p..][..p].copy_from_slice(&grad_out.data()[(n * g.o + o) * p..][..p]);
        }
    }
    let grad_bias: Vec<f64> = (0..g.o)
        .map(|o| gmat[o * cols_n..(o + 1) * cols_n].iter().sum())
        .collect();

    let mut grad_w = vec![0.0; g.o * g.patch()];
    gemm(
        g.o,
        cols_n,
        g.patch(),
        &gmat,
        false,
        &cache.cols,
        true,
        &mut grad_w,
        0.0,
    );

    let mut grad_cols = vec![0.0; g.patch() * cols_n];
    gemm(
        g.patch(),
        g.o,
        cols_n,
        weights.data(),
        true,
        &gmat,
        false,
        &mut grad_cols,
        0.0,
    );
    let grad_in = Tensor::new(cache.input_dims.clone(), g.col2im(&grad_cols))?;

    Ok((
        unbatch(grad_in, cache.squeeze),
        Tensor::new(weights.dims().to_vec(), grad_w)?,
        Tensor::new(vec![g.o], grad_bias)?,
    ))
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::new(input.dims().to_vec(), data).expect("same shape")
}

pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.dims() != input.dims() {
        return Err(Error::Shape(format!(
            "relu grad dims {:?} vs input {:?}",
            grad_out.dims(),
            input.dims()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.dims().to_vec(), data)
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_dims: Vec<usize>,
    squeeze: bool,
    argmax: Vec<usize>,
}

/// Max pooling; ties go to the earliest element in row-major window order.
pub fn maxpool_forward(input: &Tensor, size: usize, stride: usize) -> Result<(Tensor, PoolCache)> {
    let (dims, squeeze) = as_batch(input, 4, "maxpool")?;
    let &[n, c, h, w] = dims.as_slice() else {
        unreachable!()
    };
    if h < size || w < size {
        return Err(Error::Shape(format!(
            "maxpool {size}x{size} does not fit a {h}x{w} map"
        )));
    }
    let ho = conv_output_size(h, size, stride, 0)?;
    let wo = conv_output_size(w, size, stride, 0)?;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = x[best_idx];
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let out = Tensor::new(vec![n, c, ho, wo], out)?;
    Ok((
        unbatch(out, squeeze),
        PoolCache {
            input_dims: dims,
            squeeze,
            argmax,
        },
    ))
}

pub fn maxpool_backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool grad has {} values, forward produced {}",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(cache.input_dims.clone());
    let g = grad.data_mut();
    for (&idx, &v) in cache.argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(unbatch(grad, cache.squeeze))
}

/// `N x C x H x W -> N x C` spatial mean (or `C x H x W -> C`).
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor> {
    let (dims, squeeze) = as_batch(input, 4, "global average pool")?;
    let &[n, c, h, w] = dims.as_slice() else {
        unreachable!()
    };
    let area = h * w;
    if area == 0 {
        return Err(Error::Shape("global average pool over an empty map".into()));
    }
    let data = input
        .data()
        .chunks_exact(area)
        .map(|plane| plane.iter().sum::<f64>() / area as f64)
        .collect();
    Ok(unbatch(Tensor::new(vec![n, c], data)?, squeeze))
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_dims: &[usize]) -> Result<Tensor> {
    let area: usize = input_dims[input_dims.len() - 2..].iter().product();
    let planes: usize = input_dims[..input_dims.len() - 2].iter().product();
    if grad_out.len() != planes {
        return Err(Error::Shape(format!(
            "GAP grad has {} values for {planes} planes",
            grad_out.len()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat(g / area as f64).take(area))
        .collect();
    Tensor::new(input_dims.to_vec(), data)
}

/// `N x F` input, `O x F` weights, `O` bias -> `N x O`.
pub fn fully_connected_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (dims, squeeze) = as_batch(input, 2, "fully connected")?;
    let (n, f) = (dims[0], dims[1]);
    let &[o, wf] = weights.dims() else {
        return Err(Error::Shape(format!(
            "FC weights must be O x F, got {:?}",
            weights.dims()
        )));
    };
    if wf != f || bias.len() != o {
        return Err(Error::Shape(format!(
            "FC expects {wf} inputs and {o} biases, got {f} inputs and {} biases",
            bias.len()
        )));
    }
    let mut out = vec![0.0; n * o];
    for row in out.chunks_exact_mut(o) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, f, o, input.data(), false, weights.data(), true, &mut out, 1.0);
    Ok(unbatch(Tensor::new(vec![n, o], out)?, squeeze))
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn fully_connected_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (dims, squeeze) = as_batch(input, 2, "fully connected")?;
    let (n, f) = (dims[0], dims[1]);
    let o = weights.dims()[0];
    if grad_out.len() != n * o {
        return Err(Error::Shape(format!(
            "FC grad has {} values, expected {}",
            grad_out.len(),
            n * o
        )));
    }
    let mut grad_in = vec![0.0; n * f];
    gemm(
        n,
        o,
        f,
        grad_out.data(),
        false,
        weights.data(),
        false,
        &mut grad_in,
        0.0,
    );
    let mut grad_w = vec![0.0; o * f];
    gemm(
        o,
        n,
        f,
        grad_out.data(),
        true,
        input.data(),
        false,
        &mut grad_w,
        0.0,
    );
    let grad_b: Vec<f64> = (0..o)
        .map(|j| grad_out.data().iter().skip(j).step_by(o).sum())
        .collect();
    Ok((
        unbatch(Tensor::new(vec![n, f], grad_in)?, squeeze),
        Tensor::new(vec![o, f], grad_w)?,
        Tensor::new(vec![o], grad_b)?,
    ))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let cols = *logits.dims().last().unwrap_or(&1);
    let mut data = logits.data().to_vec();
    for row in data.chunks_exact_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::new(logits.dims().to_vec(), data).expect("same shape")
}

/// Vector-Jacobian product of softmax: `p * (g - <g, p>)` per row.
pub fn softmax_backward(grad_out: &Tensor, probs: &Tensor) -> Result<Tensor> {
    if grad_out.dims() != probs.dims() {
        return Err(Error::Shape("softmax grad/prob dims differ".into()));
    }
    let cols = *probs.dims().last().unwrap_or(&1);
    let mut data = Vec::with_capacity(probs.len());
    for (g, p) in grad_out
        .data()
        .chunks_exact(cols)
        .zip(probs.data().chunks_exact(cols))
    {
        let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        data.extend(g.iter().zip(p).map(|(gi, pi)| pi * (gi - dot)));
    }
    Tensor::new(probs.dims().to_vec(), data)
}

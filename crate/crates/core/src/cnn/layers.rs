//! Layer primitives with exact analytic backward passes.
//!
//! Every forward pass returns the output together with whatever the
//! backward pass needs, so layers stay immutable during inference and can be
//! shared across threads.

use super::tensor::{gemm, Mat, Scalar, Tensor};
use crate::rng::SplitMix64;
use crate::{Error, Result};

fn shape_err(msg: String) -> Error {
    Error::Validation(msg)
}

/// 3×3 convolution (cross-correlation), stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub in_c: usize,
    pub out_c: usize,
    /// `out_c × (in_c·9)`, inner index `(ic·3 + ky)·3 + kx`.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

pub const KERNEL: usize = 3;
const KK: usize = KERNEL * KERNEL;

#[derive(Debug, Clone)]
pub struct ConvCache<F> {
    col: Vec<F>,
    in_shape: [usize; 4],
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(in_c: usize, out_c: usize, weight: Vec<F>, bias: Vec<F>) -> Result<Self> {
        if weight.len() != out_c * in_c * KK || bias.len() != out_c {
            return Err(shape_err(format!(
                "conv {in_c}->{out_c} needs {} weights and {out_c} biases, got {} and {}",
                out_c * in_c * KK,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self { in_c, out_c, weight, bias })
    }

    /// He-uniform weights, zero bias.
    pub fn init(in_c: usize, out_c: usize, rng: &mut SplitMix64) -> Self {
        let bound = (6.0 / (in_c * KK) as f64).sqrt();
        let weight = (0..out_c * in_c * KK).map(|_| F::from_f64(rng.uniform(-bound, bound))).collect();
        Self { in_c, out_c, weight, bias: vec![F::zero(); out_c] }
    }

    fn im2col(&self, x: &Tensor<F>) -> Vec<F> {
        let (n, h, w) = (x.n, x.h, x.w);
        let p = n * h * w;
        let mut col = vec![F::zero(); self.in_c * KK * p];
        for ic in 0..self.in_c {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &mut col[((ic * KERNEL + ky) * KERNEL + kx) * p..][..p];
                    for i in 0..n {
                        let src = &x.data[(ic * n + i) * h * w..][..h * w];
                        let dst = &mut row[i * h * w..][..h * w];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[sy as usize * w..][..w];
                            let drow = &mut dst[y * w..][..w];
                            // Column shift kx−1 with zero padding.
                            match kx {
                                0 => drow[1..].copy_from_slice(&srow[..w - 1]),
                                1 => drow.copy_from_slice(srow),
                                _ => drow[..w - 1].copy_from_slice(&srow[1..]),
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[F], shape: [usize; 4]) -> Tensor<F> {
        let [c, n, h, w] = shape;
        let p = n * h * w;
        let mut out = Tensor::zeros(c, n, h, w);
        for ic in 0..c {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &col[((ic * KERNEL + ky) * KERNEL + kx) * p..][..p];
                    for i in 0..n {
                        let src = &row[i * h * w..][..h * w];
                        let dst = &mut out.data[(ic * n + i) * h * w..][..h * w];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[y * w..][..w];
                            let drow = &mut dst[sy as usize * w..][..w];
                            match kx {
                                0 => drow[..w - 1].iter_mut().zip(&srow[1..]).for_each(|(d, s)| *d = *d + *s),
                                1 => drow.iter_mut().zip(srow).for_each(|(d, s)| *d = *d + *s),
                                _ => drow[1..].iter_mut().zip(&srow[..w - 1]).for_each(|(d, s)| *d = *d + *s),
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, ConvCache<F>)> {
        if x.c != self.in_c || x.h == 0 || x.w == 0 {
            return Err(shape_err(format!(
                "conv expects {} input channels, got shape {:?}",
                self.in_c,
                x.shape()
            )));
        }
        let p = x.n * x.h * x.w;
        let col = self.im2col(x);
        let mut out = Tensor::zeros(self.out_c, x.n, x.h, x.w);
        for (row, b) in out.data.chunks_mut(p).zip(&self.bias) {
            row.iter_mut().for_each(|v| *v = *b);
        }
        gemm(Mat::new(&self.weight, self.out_c, self.in_c * KK), Mat::new(&col, self.in_c * KK, p), F::one(), &mut out.data);
        Ok((out, ConvCache { col, in_shape: x.shape() }))
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(&self, cache: &ConvCache<F>, grad_out: &Tensor<F>) -> Result<(Tensor<F>, Vec<F>, Vec<F>)> {
        let [_, n, h, w] = cache.in_shape;
        if grad_out.shape() != [self.out_c, n, h, w] {
            return Err(shape_err(format!("conv backward: grad shape {:?}", grad_out.shape())));
        }
        let p = n * h * w;
        let k = self.in_c * KK;
        let mut gw = vec![F::zero(); self.out_c * k];
        gemm(Mat::new(&grad_out.data, self.out_c, p), Mat::t(&cache.col, k, p), F::zero(), &mut gw);
        let gb = grad_out.data.chunks(p).map(|row| row.iter().copied().sum()).collect();
        let mut gcol = vec![F::zero(); k * p];
        gemm(Mat::t(&self.weight, self.out_c, k), Mat::new(&grad_out.data, self.out_c, p), F::zero(), &mut gcol);
        Ok((self.col2im(&gcol, cache.in_shape), gw, gb))
    }
}

/// Elementwise `max(0, x)`; the cache is the positivity mask of the input.
pub fn relu_forward<F: Scalar>(x: &Tensor<F>) -> (Tensor<F>, Vec<bool>) {
    let mask: Vec<bool> = x.data.iter().map(|&v| v > F::zero()).collect();
    let data = x.data.iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect();
    (Tensor { c: x.c, n: x.n, h: x.h, w: x.w, data }, mask)
}

pub fn relu_backward<F: Scalar>(mask: &[bool], grad_out: &Tensor<F>) -> Tensor<F> {
    let data = grad_out.data.iter().zip(mask).map(|(&g, &m)| if m { g } else { F::zero() }).collect();
    let g = grad_out;
    Tensor { c: g.c, n: g.n, h: g.h, w: g.w, data }
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    /// Flat input index of the maximum for every output element.
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

/// 2×2 max pooling, stride 2. Ties go to the first element in row-major
/// order within the window.
pub fn maxpool_forward<F: Scalar>(x: &Tensor<F>) -> Result<(Tensor<F>, PoolCache)> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(shape_err(format!("max pooling needs even spatial dims, got {}x{}", x.h, x.w)));
    }
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, x.n, oh, ow);
    let mut argmax = vec![0usize; out.data.len()];
    for plane in 0..x.c * x.n {
        let base = plane * x.h * x.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * x.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * x.w + 2 * ox + dx;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                out.data[o] = x.data[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, PoolCache { argmax, in_shape: x.shape() }))
}

pub fn maxpool_backward<F: Scalar>(cache: &PoolCache, grad_out: &Tensor<F>) -> Tensor<F> {
    let [c, n, h, w] = cache.in_shape;
    let mut g = Tensor::zeros(c, n, h, w);
    for (&idx, &v) in cache.argmax.iter().zip(&grad_out.data) {
        g.data[idx] = g.data[idx] + v;
    }
    g
}

/// `(c, n, h, w)` feature maps to a `(c·h·w) × n` batch of vectors.
pub fn flatten_forward<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let (hw, n) = (x.plane(), x.n);
    let mut out = Tensor::zeros(x.c * hw, n, 1, 1);
    for c in 0..x.c {
        for i in 0..n {
            let src = &x.data[(c * n + i) * hw..][..hw];
            for (j, &v) in src.iter().enumerate() {
                out.data[(c * hw + j) * n + i] = v;
            }
        }
    }
    out
}

pub fn flatten_backward<F: Scalar>(shape: [usize; 4], grad_out: &Tensor<F>) -> Tensor<F> {
    let [c, n, h, w] = shape;
    let hw = h * w;
    let mut g = Tensor::zeros(c, n, h, w);
    for ch in 0..c {
        for i in 0..n {
            let dst = &mut g.data[(ch * n + i) * hw..][..hw];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = grad_out.data[(ch * hw + j) * n + i];
            }
        }
    }
    g
}

/// Fully connected layer `y = W·x + b` on a `features × batch` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub in_f: usize,
    pub out_f: usize,
    /// Row-major `out_f × in_f`.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(in_f: usize, out_f: usize, weight: Vec<F>, bias: Vec<F>) -> Result<Self> {
        if weight.len() != in_f * out_f || bias.len() != out_f {
            return Err(shape_err(format!(
                "dense {in_f}->{out_f} needs {} weights and {out_f} biases, got {} and {}",
                in_f * out_f,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self { in_f, out_f, weight, bias })
    }

    pub fn init(in_f: usize, out_f: usize, rng: &mut SplitMix64) -> Self {
        let bound = (6.0 / in_f as f64).sqrt();
        let weight = (0..in_f * out_f).map(|_| F::from_f64(rng.uniform(-bound, bound))).collect();
        Self { in_f, out_f, weight, bias: vec![F::zero(); out_f] }
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        if x.c * x.h * x.w != self.in_f || x.h != 1 || x.w != 1 {
            return Err(shape_err(format!(
                "dense expects {} x batch input, got shape {:?}",
                self.in_f,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(x)?;
        let n = x.n;
        let mut out = Tensor::zeros(self.out_f, n, 1, 1);
        for (row, b) in out.data.chunks_mut(n).zip(&self.bias) {
            row.iter_mut().for_each(|v| *v = *b);
        }
        gemm(Mat::new(&self.weight, self.out_f, self.in_f), Mat::new(&x.data, self.in_f, n), F::one(), &mut out.data);
        Ok(out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`; `input` is the tensor
    /// the forward pass saw.
    pub fn backward(&self, input: &Tensor<F>, grad_out: &Tensor<F>) -> Result<(Tensor<F>, Vec<F>, Vec<F>)> {
        self.check_input(input)?;
        let n = input.n;
        if grad_out.shape() != [self.out_f, n, 1, 1] {
            return Err(shape_err(format!("dense backward: grad shape {:?}", grad_out.shape())));
        }
        let mut gw = vec![F::zero(); self.out_f * self.in_f];
        gemm(Mat::new(&grad_out.data, self.out_f, n), Mat::t(&input.data, self.in_f, n), F::zero(), &mut gw);
        let gb = grad_out.data.chunks(n).map(|row| row.iter().copied().sum()).collect();
        let mut gin = Tensor::zeros(self.in_f, n, 1, 1);
        gemm(Mat::t(&self.weight, self.out_f, self.in_f), Mat::new(&grad_out.data, self.out_f, n), F::zero(), &mut gin.data);
        Ok((gin, gw, gb))
    }
}

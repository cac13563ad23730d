//! 2-D convolution and transposed convolution with hand-written backward
//! passes, built on im2col/col2im.
//!
//! Padding is always `k / 2`, so a stride-`s` convolution maps `H` to
//! `ceil(H / s)` and the matching transposed convolution maps `H` to `H * s`.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::{axpy, dot, Tensor};

/// Geometry of a strided, `k/2`-padded convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfold `input` (`channels × in_h × in_w`) into a `rows × cols` matrix.
pub fn im2col<T: Real>(g: &ConvGeom, input: &[T], out: &mut Vec<T>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.pad() as isize;
    out.clear();
    out.resize(g.rows() * oh * ow, T::zero());
    let plane = g.in_h * g.in_w;
    for c in 0..g.channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut out[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + ky as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + kx as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into `out`.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T], out: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.pad() as isize;
    let plane = g.in_h * g.in_w;
    for c in 0..g.channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + ky as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * g.stride) as isize + kx as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Weight / bias gradients accumulated by the backward passes.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvGrads<T> {
    pub fn zeros(weight_len: usize, bias_len: usize) -> Self {
        Self {
            weight: vec![T::zero(); weight_len],
            bias: vec![T::zero(); bias_len],
        }
    }
}

/// Forward convolution. `weight` is `(c_out, c_in, k, k)`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    k: usize,
    stride: usize,
) -> Tensor<T> {
    let [n, c_in, h, w] = input.shape;
    assert_eq!(weight.len(), c_out * c_in * k * k, "conv weight shape");
    let g = ConvGeom {
        channels: c_in,
        in_h: h,
        in_w: w,
        k,
        stride,
    };
    let (oh, ow) = (g.out_h(), g.out_w());
    let pcount = oh * ow;
    let rows = g.rows();
    let mut out = Tensor::zeros([n, c_out, oh, ow]);
    let mut cols = Vec::new();
    for b in 0..n {
        im2col(&g, input.sample(b), &mut cols);
        let dst = out.sample_mut(b);
        for co in 0..c_out {
            let orow = &mut dst[co * pcount..(co + 1) * pcount];
            orow.fill(bias[co]);
            let wrow = &weight[co * rows..(co + 1) * rows];
            for (r, &wv) in wrow.iter().enumerate() {
                if wv != T::zero() {
                    axpy(orow, wv, &cols[r * pcount..(r + 1) * pcount]);
                }
            }
        }
    }
    out
}

/// Backward convolution. Accumulates into `grads`, returns `dL/dinput`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    k: usize,
    stride: usize,
    grads: &mut ConvGrads<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let [n, c_in, h, w] = input.shape;
    let c_out = grad_out.channels();
    let g = ConvGeom {
        channels: c_in,
        in_h: h,
        in_w: w,
        k,
        stride,
    };
    let pcount = g.cols();
    let rows = g.rows();
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape));
    let mut cols = Vec::new();
    let mut dcols = vec![T::zero(); rows * pcount];
    for b in 0..n {
        im2col(&g, input.sample(b), &mut cols);
        let go = grad_out.sample(b);
        for co in 0..c_out {
            let gorow = &go[co * pcount..(co + 1) * pcount];
            grads.bias[co] += gorow.iter().copied().sum::<T>();
            let gw = &mut grads.weight[co * rows..(co + 1) * rows];
            for (r, gwr) in gw.iter_mut().enumerate() {
                *gwr += dot(gorow, &cols[r * pcount..(r + 1) * pcount]);
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            dcols.fill(T::zero());
            for co in 0..c_out {
                let gorow = &go[co * pcount..(co + 1) * pcount];
                let wrow = &weight[co * rows..(co + 1) * rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    axpy(&mut dcols[r * pcount..(r + 1) * pcount], wv, gorow);
                }
            }
            col2im(&g, &dcols, gi.sample_mut(b));
        }
    }
    grad_in
}

fn tconv_geom(c_out: usize, h: usize, w: usize, k: usize, stride: usize) -> ConvGeom {
    ConvGeom {
        channels: c_out,
        in_h: h * stride,
        in_w: w * stride,
        k,
        stride,
    }
}

/// Forward transposed convolution (`H -> H * stride`). `weight` is
/// `(c_out, c_in, k, k)`.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    k: usize,
    stride: usize,
) -> Tensor<T> {
    let [n, c_in, h, w] = input.shape;
    assert_eq!(weight.len(), c_out * c_in * k * k, "tconv weight shape");
    let g = tconv_geom(c_out, h, w, k, stride);
    debug_assert_eq!((g.out_h(), g.out_w()), (h, w));
    let kk = k * k;
    let pcount = h * w;
    let oplane = g.in_h * g.in_w;
    let mut out = Tensor::zeros([n, c_out, g.in_h, g.in_w]);
    let mut cols = vec![T::zero(); g.rows() * pcount];
    for b in 0..n {
        let x = input.sample(b);
        cols.fill(T::zero());
        for co in 0..c_out {
            for ci in 0..c_in {
                let xin = &x[ci * pcount..(ci + 1) * pcount];
                let wbase = (co * c_in + ci) * kk;
                for t in 0..kk {
                    let wv = weight[wbase + t];
                    if wv != T::zero() {
                        let row = co * kk + t;
                        axpy(&mut cols[row * pcount..(row + 1) * pcount], wv, xin);
                    }
                }
            }
        }
        let dst = out.sample_mut(b);
        for co in 0..c_out {
            dst[co * oplane..(co + 1) * oplane].fill(bias[co]);
        }
        col2im(&g, &cols, dst);
    }
    out
}

/// Backward transposed convolution. Accumulates into `grads`, returns
/// `dL/dinput`.
pub fn conv_transpose2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    k: usize,
    stride: usize,
    grads: &mut ConvGrads<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let [n, c_in, h, w] = input.shape;
    let c_out = grad_out.channels();
    let g = tconv_geom(c_out, h, w, k, stride);
    let kk = k * k;
    let pcount = h * w;
    let oplane = g.in_h * g.in_w;
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape));
    let mut dcols = Vec::new();
    for b in 0..n {
        let go = grad_out.sample(b);
        for co in 0..c_out {
            grads.bias[co] += go[co * oplane..(co + 1) * oplane].iter().copied().sum::<T>();
        }
        im2col(&g, go, &mut dcols);
        let x = input.sample(b);
        for co in 0..c_out {
            for ci in 0..c_in {
                let xin = &x[ci * pcount..(ci + 1) * pcount];
                let wbase = (co * c_in + ci) * kk;
                for t in 0..kk {
                    let row = co * kk + t;
                    grads.weight[wbase + t] += dot(&dcols[row * pcount..(row + 1) * pcount], xin);
                }
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            let gs = gi.sample_mut(b);
            for co in 0..c_out {
                for ci in 0..c_in {
                    let wbase = (co * c_in + ci) * kk;
                    let gdst = &mut gs[ci * pcount..(ci + 1) * pcount];
                    for t in 0..kk {
                        let row = co * kk + t;
                        axpy(gdst, weight[wbase + t], &dcols[row * pcount..(row + 1) * pcount]);
                    }
                }
            }
        }
    }
    grad_in
}

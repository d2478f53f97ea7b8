//! 2-D convolution and its adjoint via im2col + sgemm.
//!
//! Kernels use the `(c_out, c_in, k, k)` layout for `conv2d` and
//! `(c_in, c_out, k, k)` for `conv_transpose2d`, so the transposed
//! convolution with kernel `K` is exactly the input-gradient pass of
//! `conv2d` with the same `K`.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/cols appended to the output of a transposed convolution.
    pub out_pad: usize,
}

impl ConvParams {
    pub fn new(stride: usize, pad: usize) -> Self {
        ConvParams {
            stride,
            pad,
            out_pad: 0,
        }
    }

    pub fn with_out_pad(mut self, out_pad: usize) -> Self {
        self.out_pad = out_pad;
        self
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Sliding-window geometry of a forward convolution from `(h, w)` to `(oh, ow)`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output positions `o` with `0 <= o*stride + offset - pad < extent`.
    fn valid_range(&self, offset: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > offset {
            (self.pad - offset).div_ceil(s)
        } else {
            0
        };
        let hi = if extent + self.pad > offset {
            ((extent - 1 + self.pad - offset) / s + 1).min(out_extent)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn im2col(src: &[f32], g: &Geometry, cols: &mut [f32]) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    let plane = g.h * g.w;
    let ncols = g.cols();
    for c in 0..g.channels {
        let src_c = &src[c * plane..(c + 1) * plane];
        for ki in 0..k {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.h, g.oh);
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = g.valid_range(kj, g.w, g.ow);
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if oy < oy_lo || oy >= oy_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = oy * s + ki - p;
                    let src_row = &src_c[iy * g.w..(iy + 1) * g.w];
                    line[..ox_lo].fill(0.0);
                    line[ox_hi..].fill(0.0);
                    if s == 1 {
                        let start = ox_lo + kj - p;
                        line[ox_lo..ox_hi].copy_from_slice(&src_row[start..start + ox_hi - ox_lo]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox] = src_row[ox * s + kj - p];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back into an image; the adjoint of `im2col`.
fn col2im(cols: &[f32], g: &Geometry, dst: &mut [f32]) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    let plane = g.h * g.w;
    let ncols = g.cols();
    for c in 0..g.channels {
        let dst_c = &mut dst[c * plane..(c + 1) * plane];
        for ki in 0..k {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.h, g.oh);
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = g.valid_range(kj, g.w, g.ow);
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ki - p;
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let dst_row = &mut dst_c[iy * g.w..(iy + 1) * g.w];
                    for ox in ox_lo..ox_hi {
                        dst_row[ox * s + kj - p] += line[ox];
                    }
                }
            }
        }
    }
}

/// Row-major `C = A·B + beta·C` with explicit strides; `(m, k) x (k, n)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].fill(0.0);
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the slice length checks above bound every index that sgemm
    // reads from `a`/`b` and writes in the dense `m x n` block of `c`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_common(kernel: &Tensor, bias: &[f32], params: ConvParams, bias_len: usize) -> Result<()> {
    let ks = kernel.shape();
    if ks.h() != ks.w() {
        return Err(Error::shape(format!("kernel {ks} is not square")));
    }
    if ks.h() == 0 {
        return Err(Error::shape("kernel has zero spatial size"));
    }
    if !(params.stride == 1 || params.stride == 2) {
        return Err(Error::shape(format!(
            "stride {} unsupported (expected 1 or 2)",
            params.stride
        )));
    }
    if bias.len() != bias_len {
        return Err(Error::shape(format!(
            "bias has {} entries, expected {bias_len}",
            bias.len()
        )));
    }
    Ok(())
}

fn conv_out(extent: usize, k: usize, params: ConvParams) -> Result<usize> {
    let padded = extent + 2 * params.pad;
    if padded < k {
        return Err(Error::shape(format!(
            "zero-size output: extent {extent} with pad {} is smaller than kernel {k}",
            params.pad
        )));
    }
    Ok((padded - k) / params.stride + 1)
}

fn conv_geometry(input: Shape, kernel: &Tensor, params: ConvParams) -> Result<Geometry> {
    let k = kernel.shape().h();
    Ok(Geometry {
        channels: input.c(),
        h: input.h(),
        w: input.w(),
        k,
        stride: params.stride,
        pad: params.pad,
        oh: conv_out(input.h(), k, params)?,
        ow: conv_out(input.w(), k, params)?,
    })
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &[f32], params: ConvParams) -> Result<Tensor> {
    let ks = kernel.shape();
    let is = input.shape();
    check_common(kernel, bias, params, ks.n())?;
    if is.c() != ks.c() {
        return Err(Error::shape(format!(
            "conv2d input {is} has {} channels but kernel {ks} expects {}",
            is.c(),
            ks.c()
        )));
    }
    let g = conv_geometry(is, kernel, params)?;
    let co = ks.n();
    let out_shape = Shape::new(is.n(), co, g.oh, g.ow);
    let mut out = vec![0.0f32; out_shape.numel()];
    let mut cols = vec![0.0f32; g.rows() * g.cols()];
    let (kk, p) = (g.rows(), g.cols());
    for n in 0..is.n() {
        im2col(input.item(n), &g, &mut cols);
        let dst = &mut out[n * co * p..(n + 1) * co * p];
        gemm(co, kk, p, kernel.data(), (kk, 1), &cols, (p, 1), 0.0, dst);
        for (o, b) in bias.iter().enumerate() {
            for v in &mut dst[o * p..(o + 1) * p] {
                *v += b;
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    params: ConvParams,
) -> Result<ConvGrads> {
    let ks = kernel.shape();
    let is = input.shape();
    let g = conv_geometry(is, kernel, params)?;
    let co = ks.n();
    let expected = Shape::new(is.n(), co, g.oh, g.ow);
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "conv2d grad_out {} does not match forward output {expected}",
            grad_out.shape()
        )));
    }
    let (kk, p) = (g.rows(), g.cols());
    let mut d_input = vec![0.0f32; is.numel()];
    let mut d_kernel = vec![0.0f32; ks.numel()];
    let mut d_bias = vec![0.0f32; co];
    let mut cols = vec![0.0f32; kk * p];
    let mut d_cols = vec![0.0f32; kk * p];
    let item = is.item_len();
    for n in 0..is.n() {
        let dy = grad_out.item(n);
        im2col(input.item(n), &g, &mut cols);
        // dW[co, kk] += dY[co, p] . cols^T
        gemm(co, p, kk, dy, (p, 1), &cols, (1, p), 1.0, &mut d_kernel);
        // dcols[kk, p] = W^T . dY
        gemm(kk, co, p, kernel.data(), (1, kk), dy, (p, 1), 0.0, &mut d_cols);
        col2im(&d_cols, &g, &mut d_input[n * item..(n + 1) * item]);
        for (o, db) in d_bias.iter_mut().enumerate() {
            *db += dy[o * p..(o + 1) * p].iter().sum::<f32>();
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(is, d_input)?,
        kernel: d_kernel,
        bias: d_bias,
    })
}

fn transpose_geometry(input: Shape, kernel: &Tensor, params: ConvParams) -> Result<Geometry> {
    let k = kernel.shape().h();
    let s = params.stride;
    if params.out_pad >= s {
        return Err(Error::shape(format!(
            "output padding {} must be smaller than stride {s}",
            params.out_pad
        )));
    }
    let out = |extent: usize| -> Result<usize> {
        if extent == 0 {
            return Err(Error::shape("zero-size input to transposed convolution"));
        }
        let full = (extent - 1) * s + k + params.out_pad;
        if full <= 2 * params.pad {
            return Err(Error::shape(format!(
                "zero-size output: extent {extent}, kernel {k}, pad {}",
                params.pad
            )));
        }
        Ok(full - 2 * params.pad)
    };
    Ok(Geometry {
        channels: kernel.shape().c(),
        h: out(input.h())?,
        w: out(input.w())?,
        k,
        stride: s,
        pad: params.pad,
        oh: input.h(),
        ow: input.w(),
    })
}

pub fn conv_transpose2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    params: ConvParams,
) -> Result<Tensor> {
    let ks = kernel.shape();
    let is = input.shape();
    check_common(kernel, bias, params, ks.c())?;
    if is.c() != ks.n() {
        return Err(Error::shape(format!(
            "conv_transpose2d input {is} has {} channels but kernel {ks} expects {}",
            is.c(),
            ks.n()
        )));
    }
    let g = transpose_geometry(is, kernel, params)?;
    let (ci, co) = (ks.n(), ks.c());
    let (kk, p) = (g.rows(), g.cols());
    let out_shape = Shape::new(is.n(), co, g.h, g.w);
    let out_item = out_shape.item_len();
    let plane = g.h * g.w;
    let mut out = vec![0.0f32; out_shape.numel()];
    let mut cols = vec![0.0f32; kk * p];
    for n in 0..is.n() {
        // cols[kk, p] = W^T[kk, ci] . x[ci, p]
        gemm(kk, ci, p, kernel.data(), (1, kk), input.item(n), (p, 1), 0.0, &mut cols);
        let dst = &mut out[n * out_item..(n + 1) * out_item];
        col2im(&cols, &g, dst);
        for (o, b) in bias.iter().enumerate() {
            for v in &mut dst[o * plane..(o + 1) * plane] {
                *v += b;
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn conv_transpose2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    params: ConvParams,
) -> Result<ConvGrads> {
    let ks = kernel.shape();
    let is = input.shape();
    let g = transpose_geometry(is, kernel, params)?;
    let (ci, co) = (ks.n(), ks.c());
    let expected = Shape::new(is.n(), co, g.h, g.w);
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "conv_transpose2d grad_out {} does not match forward output {expected}",
            grad_out.shape()
        )));
    }
    let (kk, p) = (g.rows(), g.cols());
    let plane = g.h * g.w;
    let mut d_input = vec![0.0f32; is.numel()];
    let mut d_kernel = vec![0.0f32; ks.numel()];
    let mut d_bias = vec![0.0f32; co];
    let mut cols = vec![0.0f32; kk * p];
    let item = is.item_len();
    for n in 0..is.n() {
        let dy = grad_out.item(n);
        im2col(dy, &g, &mut cols);
        // dX[ci, p] = W[ci, kk] . cols
        gemm(ci, kk, p, kernel.data(), (kk, 1), &cols, (p, 1), 0.0, &mut d_input[n * item..(n + 1) * item]);
        // dW[ci, kk] += x[ci, p] . cols^T
        gemm(ci, p, kk, input.item(n), (p, 1), &cols, (1, p), 1.0, &mut d_kernel);
        for (o, db) in d_bias.iter_mut().enumerate() {
            *db += dy[o * plane..(o + 1) * plane].iter().sum::<f32>();
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(is, d_input)?,
        kernel: d_kernel,
        bias: d_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    /// Direct sliding-window convolution, f64 accumulation.
    fn naive_conv(x: &Tensor, k: &Tensor, b: &[f32], s: usize, p: usize) -> Vec<f64> {
        let (xs, ks) = (x.shape(), k.shape());
        let kh = ks.h();
        let oh = (xs.h() + 2 * p - kh) / s + 1;
        let ow = (xs.w() + 2 * p - kh) / s + 1;
        let mut out = Vec::new();
        for n in 0..xs.n() {
            for o in 0..ks.n() {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o] as f64;
                        for c in 0..xs.c() {
                            for i in 0..kh {
                                for j in 0..kh {
                                    let iy = (oy * s + i) as isize - p as isize;
                                    let ix = (ox * s + j) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= xs.h() as isize || ix >= xs.w() as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((n * xs.c() + c) * xs.h() + iy as usize) * xs.w() + ix as usize];
                                    let kv = k.data()[((o * ks.c() + c) * kh + i) * kh + j];
                                    acc += xv as f64 * kv as f64;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scaling_kernel() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let k = Tensor::full(Shape::new(1, 1, 1, 1), 2.0);
        let y = conv2d(&x, &k, &[0.0], ConvParams::new(1, 0)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn identity_kernel() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(Shape::new(2, 1, 5, 6), 1.0, &mut rng);
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let k = Tensor::from_vec(Shape::new(1, 1, 3, 3), kd).unwrap();
        let y = conv2d(&x, &k, &[0.0], ConvParams::new(1, 1)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = Rng::new(2);
        let x = Tensor::randn(Shape::new(1, 1, 4, 4), 1.0, &mut rng);
        let k = Tensor::randn(Shape::new(1, 1, 3, 3), 1.0, &mut rng);
        let y = conv2d(&x, &k, &[0.25], ConvParams::new(1, 0)).unwrap();
        let want = naive_conv(&x, &k, &[0.25], 1, 0);
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        for (a, b) in y.data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn strided_padded_multichannel_matches_oracle() {
        let mut rng = Rng::new(3);
        for &(s, p, k, h) in &[(2, 2, 5, 9), (2, 1, 3, 8), (1, 2, 5, 7), (2, 0, 3, 7)] {
            let x = Tensor::randn(Shape::new(2, 3, h, h + 1), 1.0, &mut rng);
            let kern = Tensor::randn(Shape::new(4, 3, k, k), 1.0, &mut rng);
            let b: Vec<f32> = (0..4).map(|i| i as f32 * 0.1).collect();
            let y = conv2d(&x, &kern, &b, ConvParams::new(s, p)).unwrap();
            let want = naive_conv(&x, &kern, &b, s, p);
            assert_eq!(y.len(), want.len());
            for (a, w) in y.data().iter().zip(&want) {
                assert!((*a as f64 - w).abs() < 1e-4, "s={s} p={p}: {a} vs {w}");
            }
        }
    }

    #[test]
    fn output_size_formula() {
        let x = Tensor::zeros(Shape::new(1, 1, 64, 64));
        let k = Tensor::zeros(Shape::new(1, 1, 5, 5));
        let y = conv2d(&x, &k, &[0.0], ConvParams::new(2, 2)).unwrap();
        assert_eq!((y.shape().h(), y.shape().w()), (32, 32));
        let y = conv2d(&x, &k, &[0.0], ConvParams::new(1, 2)).unwrap();
        assert_eq!((y.shape().h(), y.shape().w()), (64, 64));
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let k = Tensor::zeros(Shape::new(1, 3, 3, 3));
        assert!(matches!(conv2d(&x, &k, &[0.0], ConvParams::new(1, 0)), Err(Error::Shape(_))));
        let k = Tensor::zeros(Shape::new(1, 2, 5, 5));
        let err = conv2d(&Tensor::zeros(Shape::new(1, 2, 2, 2)), &k, &[0.0], ConvParams::new(1, 0));
        assert!(matches!(err, Err(Error::Shape(m)) if m.contains("zero-size")));
        let k = Tensor::zeros(Shape::new(1, 2, 3, 3));
        assert!(conv2d(&x, &k, &[0.0], ConvParams::new(3, 0)).is_err());
        assert!(conv2d(&x, &k, &[0.0, 1.0], ConvParams::new(1, 0)).is_err());
    }

    #[test]
    fn transpose_zero_stuffing() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        let y = conv_transpose2d(&x, &k, &[0.0], ConvParams::new(2, 0).with_out_pad(1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        #[rustfmt::skip]
        let want = [
            1.0, 0.0, 2.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            3.0, 0.0, 4.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn transpose_zero_kernel_gives_bias() {
        let mut rng = Rng::new(4);
        let x = Tensor::randn(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
        let k = Tensor::zeros(Shape::new(3, 2, 5, 5));
        let y = conv_transpose2d(&x, &k, &[0.5, -1.5], ConvParams::new(2, 2).with_out_pad(1)).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 2, 8, 8));
        for n in 0..2 {
            let item = y.item(n);
            assert!(item[..64].iter().all(|&v| v == 0.5));
            assert!(item[64..].iter().all(|&v| v == -1.5));
        }
    }

    #[test]
    fn transpose_rejects_large_out_pad() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let k = Tensor::zeros(Shape::new(1, 1, 3, 3));
        assert!(conv_transpose2d(&x, &k, &[0.0], ConvParams::new(2, 1).with_out_pad(2)).is_err());
        assert!(conv_transpose2d(&x, &k, &[0.0], ConvParams::new(1, 0).with_out_pad(1)).is_err());
    }

    #[test]
    fn transpose_is_conv_input_gradient() {
        let mut rng = Rng::new(5);
        let params = ConvParams::new(2, 2).with_out_pad(1);
        let k = Tensor::randn(Shape::new(3, 2, 5, 5), 1.0, &mut rng);
        let y = Tensor::randn(Shape::new(1, 3, 4, 4), 1.0, &mut rng);
        let up = conv_transpose2d(&y, &k, &[0.0, 0.0], params).unwrap();
        // conv2d with kernel (3, 2, 5, 5) maps 2 channels 8x8 -> 3 channels 4x4
        let x = Tensor::zeros(up.shape());
        let grads = conv2d_backward(&x, &k, &y, ConvParams::new(2, 2)).unwrap();
        for (a, b) in up.data().iter().zip(grads.input.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

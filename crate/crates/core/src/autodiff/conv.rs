//! Stride-1 "same" cross-correlation with replicate padding, lowered to GEMM.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `out[m×n] = beta·out + a[m×k] · b[k×n]`, each operand given with explicit
/// row/column strides so transposes are free.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    out: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (a.len() > (m - 1) * rsa + (k - 1) * csa));
    assert!(k == 0 || n == 0 || (b.len() > (k - 1) * rsb + (n - 1) * csb));
    assert!(out.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
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
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    pub fn from(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Self> {
        let (c_in, h, w) = input.chw()?;
        let [c_out, wc_in, kh, kw] = weight.shape()[..] else {
            return Err(Error::Shape(format!("conv kernel must be 4D, got {:?}", weight.shape())));
        };
        if wc_in != c_in {
            return Err(Error::Shape(format!("conv expects {wc_in} input channels, got {c_in}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("conv kernel must be odd-sized, got {kh}x{kw}")));
        }
        if bias.shape() != [c_out] {
            return Err(Error::Shape(format!("conv bias must be [{c_out}], got {:?}", bias.shape())));
        }
        Ok(Self {
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
        })
    }

    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    /// Visits `(col row, pixel, source index)` for every im2col entry. The
    /// source index is clamped into the image, which is replicate padding.
    fn for_each_entry(&self, mut visit: impl FnMut(usize, usize, usize)) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for y in 0..self.h {
                        let sy = (y + ki).saturating_sub(ph).min(self.h - 1);
                        for x in 0..self.w {
                            let sx = (x + kj).saturating_sub(pw).min(self.w - 1);
                            visit(row, y * self.w + x, (c * self.h + sy) * self.w + sx);
                        }
                    }
                }
            }
        }
    }

    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let n = self.pixels();
        let mut cols = vec![0.0; self.patch() * n];
        self.for_each_entry(|row, p, src| cols[row * n + p] = input[src]);
        cols
    }

    pub fn col2im_add(&self, cols: &[f64], grad_in: &mut [f64]) {
        let n = self.pixels();
        self.for_each_entry(|row, p, src| grad_in[src] += cols[row * n + p]);
    }

    pub fn forward(&self, cols: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let n = self.pixels();
        let mut out = vec![0.0; self.c_out * n];
        for (o, chunk) in out.chunks_mut(n).enumerate() {
            chunk.fill(bias[o]);
        }
        let k = self.patch();
        gemm(self.c_out, k, n, weight, (k, 1), cols, (n, 1), 1.0, &mut out);
        out
    }
}

/// Convolution layer parameters: kernel `[out, in, kh, kw]` and bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let [c_out, _, kh, kw] = weight.shape()[..] else {
            return Err(Error::Shape("conv kernel must be 4D".into()));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("conv kernel must be odd-sized, got {kh}x{kw}")));
        }
        if bias.shape() != [c_out] {
            return Err(Error::Shape("conv bias length must equal output channels".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Non-differentiable convenience wrapper around the graph convolution.
pub fn conv2d(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let geo = ConvGeometry::from(input, &layer.weight, &layer.bias)?;
    let cols = geo.im2col(input.data());
    let out = geo.forward(&cols, layer.weight.data(), layer.bias.data());
    Tensor::new(vec![geo.c_out, geo.h, geo.w], out)
}

//! im2col convolution and max-pooling kernels.
//!
//! Layout conventions: inputs are `N×C×H×W`, kernels are `F×C×KH×KW`, and the
//! convolution is a cross-correlation (no kernel flip) with zero padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stride and zero padding along the two spatial axes `(axis 2, axis 3)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dParams {
    pub fn square(stride: usize, padding: usize) -> Self {
        Conv2dParams {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams::square(1, 0)
    }
}

/// Output extent along one axis; rejects non-integral or empty results.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry("stride must be positive".into()));
    }
    let padded = input + 2 * padding;
    if kernel == 0 || padded < kernel {
        return Err(Error::Geometry(format!(
            "kernel extent {kernel} does not fit padded input extent {padded}"
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::Geometry(format!(
            "({input} + 2*{padding} - {kernel}) is not divisible by stride {stride}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Resolved shapes for one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub params: Conv2dParams,
}

impl ConvShape {
    pub fn resolve(input: &[usize], kernel: &[usize], params: Conv2dParams) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[1] != kernel[1] {
            return Err(Error::dim("conv2d", input, kernel));
        }
        let oh = output_extent(input[2], kernel[2], params.stride.0, params.padding.0)?;
        let ow = output_extent(input[3], kernel[3], params.stride.1, params.padding.1)?;
        Ok(ConvShape {
            n: input[0],
            c: input[1],
            h: input[2],
            w: input[3],
            f: kernel[0],
            kh: kernel[2],
            kw: kernel[3],
            oh,
            ow,
            params,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Number of output pixels over the whole batch.
    pub fn columns(&self) -> usize {
        self.n * self.oh * self.ow
    }

    /// Calls `f(col_row, col_index, input_offset)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (sh, sw) = self.params.stride;
        let (ph, pw) = self.params.padding;
        let cols = self.columns();
        let plane = self.oh * self.ow;
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    for b in 0..self.n {
                        let in_base = (b * self.c + c) * self.h * self.w;
                        for oy in 0..self.oh {
                            let y = (oy * sh + i) as isize - ph as isize;
                            if y < 0 || y >= self.h as isize {
                                continue;
                            }
                            for ox in 0..self.ow {
                                let x = (ox * sw + j) as isize - pw as isize;
                                if x < 0 || x >= self.w as isize {
                                    continue;
                                }
                                let col = b * plane + oy * self.ow + ox;
                                debug_assert!(col < cols);
                                f(row, col, in_base + y as usize * self.w + x as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Unrolls input patches into a `(C·KH·KW) × (N·OH·OW)` matrix.
pub(crate) fn im2col(input: &[f64], s: &ConvShape) -> Vec<f64> {
    let cols = s.columns();
    let mut out = vec![0.0; s.patch_len() * cols];
    s.for_each_tap(|row, col, off| out[row * cols + col] = input[off]);
    out
}

/// Scatter-adds a column matrix back into input layout (adjoint of [`im2col`]).
pub(crate) fn col2im(cols_data: &[f64], s: &ConvShape) -> Vec<f64> {
    let cols = s.columns();
    let mut out = vec![0.0; s.n * s.c * s.h * s.w];
    s.for_each_tap(|row, col, off| out[off] += cols_data[row * cols + col]);
    out
}

/// `F × (N·P)` → `N × F × P` layout change (and its inverse).
pub(crate) fn fnp_to_nfp(data: &[f64], f: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for fi in 0..f {
        for b in 0..n {
            let src = &data[fi * n * p + b * p..fi * n * p + (b + 1) * p];
            out[(b * f + fi) * p..(b * f + fi + 1) * p].copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn nfp_to_fnp(data: &[f64], f: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..n {
        for fi in 0..f {
            let src = &data[(b * f + fi) * p..(b * f + fi + 1) * p];
            out[fi * n * p + b * p..fi * n * p + (b + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// Non-overlapping `k×k` max pooling. Returns pooled values and the flat input
/// index of each maximum (first index wins ties).
pub(crate) fn max_pool(input: &[f64], shape: &[usize], k: usize) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    if shape.len() != 4 {
        return Err(Error::dim("max_pool2d", shape, &[4]));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let oh = output_extent(h, k, k, 0)?;
    let ow = output_extent(w, k, k, 0)?;
    let mut vals = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * k * w + ox * k;
                for i in 0..k {
                    for j in 0..k {
                        let off = base + (oy * k + i) * w + ox * k + j;
                        if input[off] > input[best] {
                            best = off;
                        }
                    }
                }
                vals.push(input[best]);
                arg.push(best);
            }
        }
    }
    Ok((vec![n, c, oh, ow], vals, arg))
}

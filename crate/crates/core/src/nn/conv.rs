//! Direct 2-D convolution through im2col + GEMM.
//!
//! Weights are `[out, in, k, k]`; a sample `[C, H, W]` is unrolled into a
//! `[C*k*k, out_h*out_w]` column matrix so the convolution is one matrix
//! product per sample.

use super::spec::ConvGeometry;
use crate::tensor::gemm;

pub(crate) fn im2col(x: &[f64], channels: usize, geo: &ConvGeometry) -> Vec<f64> {
    let k = geo.kernel;
    let p = geo.out_h * geo.out_w;
    let mut cols = vec![0.0; channels * k * k * p];
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..geo.out_h {
                    let iy = (oy * geo.stride + ki) as isize - geo.pad_top as isize;
                    if iy < 0 || iy >= geo.in_h as isize {
                        continue;
                    }
                    for ox in 0..geo.out_w {
                        let ix = (ox * geo.stride + kj) as isize - geo.pad_left as isize;
                        if ix < 0 || ix >= geo.in_w as isize {
                            continue;
                        }
                        dst[oy * geo.out_w + ox] = x[(c * geo.in_h + iy as usize) * geo.in_w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_acc(cols: &[f64], channels: usize, geo: &ConvGeometry, dx: &mut [f64]) {
    let k = geo.kernel;
    let p = geo.out_h * geo.out_w;
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..geo.out_h {
                    let iy = (oy * geo.stride + ki) as isize - geo.pad_top as isize;
                    if iy < 0 || iy >= geo.in_h as isize {
                        continue;
                    }
                    for ox in 0..geo.out_w {
                        let ix = (ox * geo.stride + kj) as isize - geo.pad_left as isize;
                        if ix < 0 || ix >= geo.in_w as isize {
                            continue;
                        }
                        dx[(c * geo.in_h + iy as usize) * geo.in_w + ix as usize] += src[oy * geo.out_w + ox];
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geo: ConvGeometry,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.in_channels * self.geo.kernel * self.geo.kernel
    }
    fn positions(&self) -> usize {
        self.geo.out_h * self.geo.out_w
    }
    fn in_len(&self) -> usize {
        self.in_channels * self.geo.in_h * self.geo.in_w
    }
    fn out_len(&self) -> usize {
        self.out_channels * self.positions()
    }
}

pub(crate) fn forward(x: &[f64], batch: usize, dims: &ConvDims, weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (pk, p, o) = (dims.patch(), dims.positions(), dims.out_channels);
    let mut out = vec![0.0; batch * dims.out_len()];
    for n in 0..batch {
        let cols = im2col(&x[n * dims.in_len()..(n + 1) * dims.in_len()], dims.in_channels, &dims.geo);
        let dst = &mut out[n * dims.out_len()..(n + 1) * dims.out_len()];
        gemm(false, false, o, pk, p, weight, &cols, 0.0, dst);
        if let Some(b) = bias {
            for (oc, &bv) in b.iter().enumerate() {
                dst[oc * p..(oc + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Returns `(dx, dW, db)`.
pub(crate) fn backward(
    x: &[f64],
    batch: usize,
    dims: &ConvDims,
    weight: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (pk, p, o) = (dims.patch(), dims.positions(), dims.out_channels);
    let mut dx = vec![0.0; batch * dims.in_len()];
    let mut dw = vec![0.0; o * pk];
    let mut db = vec![0.0; o];
    let mut dcols = vec![0.0; pk * p];
    for n in 0..batch {
        let xs = &x[n * dims.in_len()..(n + 1) * dims.in_len()];
        let dys = &dy[n * dims.out_len()..(n + 1) * dims.out_len()];
        let cols = im2col(xs, dims.in_channels, &dims.geo);
        // dW += dY [o, p] * cols^T [p, pk]
        gemm(false, true, o, p, pk, dys, &cols, 1.0, &mut dw);
        for (oc, d) in db.iter_mut().enumerate() {
            *d += dys[oc * p..(oc + 1) * p].iter().sum::<f64>();
        }
        // dcols = W^T [pk, o] * dY [o, p]
        gemm(true, false, pk, o, p, weight, dys, 0.0, &mut dcols);
        col2im_acc(&dcols, dims.in_channels, &dims.geo, &mut dx[n * dims.in_len()..(n + 1) * dims.in_len()]);
    }
    (dx, dw, db)
}

//! Separable bicubic resampling as a differentiable (linear) operation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Keys cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four source taps (edge-clamped) and weights for one output sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps {
    pub idx: [usize; 4],
    pub w: [f64; 4],
}

/// Tap table for resampling an axis of `n_in` samples to `n_out`, using
/// half-pixel centres: `src = (dst + 0.5) * n_in / n_out - 0.5`.
pub(crate) fn axis_taps(n_in: usize, n_out: usize) -> Vec<Taps> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let pos = base as isize + k as isize - 1;
                idx[k] = pos.clamp(0, n_in as isize - 1) as usize;
                w[k] = cubic_kernel(frac - (k as f64 - 1.0));
            }
            Taps { idx, w }
        })
        .collect()
}

/// Resamples rows of length `n_in` in `src` to rows of `n_out`.
///
/// Each output is `x[ref] + sum_k w_k (x[k] - x[ref])` with `ref` the tap at
/// the floor position. Since the weights sum to one this is the ordinary
/// weighted sum, but constant signals come through exactly.
fn resample_rows<T: Element>(
    src: &[T],
    taps: &[Taps],
    stride_in: usize,
    stride_out: usize,
    count: usize,
    dst: &mut [T],
) {
    let tw: Vec<[T; 4]> = taps.iter().map(|t| t.w.map(T::of)).collect();
    for r in 0..count {
        let s = &src[r * stride_in..];
        let d = &mut dst[r * stride_out..];
        for (o, (t, w)) in taps.iter().zip(&tw).enumerate() {
            let x0 = s[t.idx[1]];
            let mut acc = T::zero();
            for k in 0..4 {
                acc = acc + w[k] * (s[t.idx[k]] - x0);
            }
            d[o] = x0 + acc;
        }
    }
}

/// Transpose of [`resample_rows`].
fn resample_rows_adjoint<T: Element>(g: &[T], taps: &[Taps], n_in: usize, dst: &mut [T]) {
    let tw: Vec<[T; 4]> = taps.iter().map(|t| t.w.map(T::of)).collect();
    for (row_g, row_d) in g.chunks(taps.len()).zip(dst.chunks_mut(n_in)) {
        for ((t, w), &gv) in taps.iter().zip(&tw).zip(row_g) {
            let mut wsum = T::zero();
            for k in 0..4 {
                row_d[t.idx[k]] = row_d[t.idx[k]] + w[k] * gv;
                wsum = wsum + w[k];
            }
            row_d[t.idx[1]] = row_d[t.idx[1]] + (T::one() - wsum) * gv;
        }
    }
}

/// Transposes each `[rows, cols]` plane.
fn transpose_planes<T: Element>(x: &[T], planes: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    out.par_chunks_mut(rows * cols).enumerate().for_each(|(p, o)| {
        let src = &x[p * rows * cols..(p + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                o[c * rows + r] = src[r * cols + c];
            }
        }
    });
    debug_assert_eq!(out.len(), planes * rows * cols);
    out
}

#[allow(clippy::too_many_arguments)]
fn resize_planes<T: Element>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    tx: &[Taps],
    ty: &[Taps],
) -> Vec<T> {
    // width pass
    let mut tmp = vec![T::zero(); planes * h * ow];
    tmp.par_chunks_mut(h * ow).enumerate().for_each(|(p, d)| {
        resample_rows(&x[p * h * w..(p + 1) * h * w], tx, w, ow, h, d);
    });
    // height pass on transposed planes
    let tt = transpose_planes(&tmp, planes, h, ow);
    let mut out_t = vec![T::zero(); planes * ow * oh];
    out_t.par_chunks_mut(ow * oh).enumerate().for_each(|(p, d)| {
        resample_rows(&tt[p * ow * h..(p + 1) * ow * h], ty, h, oh, ow, d);
    });
    transpose_planes(&out_t, planes, ow, oh)
}

impl<T: Element> Tensor<T> {
    /// Bicubic resize of the two trailing axes `[.., H, W] -> [.., oh, ow]`
    /// with edge clamping.
    pub fn resize_bicubic(&self, oh: usize, ow: usize) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 || oh == 0 || ow == 0 {
            return Err(Error::dim(
                "resize_bicubic",
                format!("cannot resize {:?} to {oh}x{ow}", self.shape()),
            ));
        }
        let (h, w) = (self.shape()[r - 2], self.shape()[r - 1]);
        if h == 0 || w == 0 {
            return Err(Error::dim("resize_bicubic", "empty input"));
        }
        let planes: usize = self.shape()[..r - 2].iter().product();
        let tx = axis_taps(w, ow);
        let ty = axis_taps(h, oh);
        let out = resize_planes(&self.data(), planes, h, w, oh, ow, &tx, &ty);
        let mut shape = self.shape()[..r - 2].to_vec();
        shape.extend([oh, ow]);
        Ok(Tensor::from_op(
            out,
            shape,
            "resize_bicubic",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                // adjoint of the height pass, on transposed planes
                let gt = transpose_planes(g, planes, oh, ow);
                let mut gmid_t = vec![T::zero(); planes * ow * h];
                gmid_t.par_chunks_mut(ow * h).enumerate().for_each(|(p, d)| {
                    resample_rows_adjoint(&gt[p * ow * oh..(p + 1) * ow * oh], &ty, h, d);
                });
                let gmid = transpose_planes(&gmid_t, planes, ow, h);
                // adjoint of the width pass
                let mut gx = vec![T::zero(); planes * h * w];
                gx.par_chunks_mut(h * w).enumerate().for_each(|(p, d)| {
                    resample_rows_adjoint(&gmid[p * h * ow..(p + 1) * h * ow], &tx, w, d);
                });
                vec![Some(gx)]
            }),
        ))
    }
}

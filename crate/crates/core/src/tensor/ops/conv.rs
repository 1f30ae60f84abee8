//! 2-D cross-correlation (no kernel flip), dense and depthwise.
//!
//! Every output element is produced by exactly one worker in a fixed
//! summation order, so parallel and serial runs agree bit-for-bit.

use rayon::prelude::*;

use super::layout::dims4;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy)]
struct Geom {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn new(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if ph < kh || pw < kw || !(ph - kh).is_multiple_of(stride) || !(pw - kw).is_multiple_of(stride) {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "input {h}x{w} with kernel {kh}x{kw}, pad {pad}, stride {stride} \
                     gives a non-integral output extent"
                ),
            ));
        }
        Ok(Geom {
            h,
            w,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
            kh,
            kw,
            stride,
            pad,
        })
    }

    /// Output columns `lo..hi` whose input column `ox*stride + kx - pad` is
    /// inside the image.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let kx = kx as isize;
        let lo = ((p - kx).max(0) + s - 1) / s;
        let hi_incl = (self.w as isize - 1 + p - kx).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, self.ow as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    #[inline]
    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    #[inline]
    fn ix(&self, ox: usize, kx: usize) -> usize {
        ox * self.stride + kx - self.pad
    }
}

/// `out += w * x` over one input/output plane pair.
#[inline]
fn correlate_plane<T: Element>(x: &[T], kern: &[T], out: &mut [T], g: &Geom) {
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let wv = kern[ky * g.kw + kx];
            let (lo, hi) = g.ox_range(kx);
            for oy in 0..g.oh {
                let Some(iy) = g.iy(oy, ky) else { continue };
                let xr = &x[iy * g.w..(iy + 1) * g.w];
                let or = &mut out[oy * g.ow..(oy + 1) * g.ow];
                for ox in lo..hi {
                    or[ox] = or[ox] + wv * xr[g.ix(ox, kx)];
                }
            }
        }
    }
}

/// Adjoint of [`correlate_plane`] w.r.t. the input: `dx += w^T * g`.
#[inline]
fn correlate_plane_adjoint<T: Element>(gout: &[T], kern: &[T], dx: &mut [T], g: &Geom) {
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let wv = kern[ky * g.kw + kx];
            let (lo, hi) = g.ox_range(kx);
            for oy in 0..g.oh {
                let Some(iy) = g.iy(oy, ky) else { continue };
                let gr = &gout[oy * g.ow..(oy + 1) * g.ow];
                let dr = &mut dx[iy * g.w..(iy + 1) * g.w];
                for ox in lo..hi {
                    let ix = g.ix(ox, kx);
                    dr[ix] = dr[ix] + wv * gr[ox];
                }
            }
        }
    }
}

/// Kernel gradient for one plane pair: `dk[ky,kx] += sum g[oy,ox] * x[iy,ix]`.
#[inline]
fn kernel_grad_plane<T: Element>(gout: &[T], x: &[T], dk: &mut [T], g: &Geom) {
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let (lo, hi) = g.ox_range(kx);
            let mut acc = T::zero();
            for oy in 0..g.oh {
                let Some(iy) = g.iy(oy, ky) else { continue };
                let gr = &gout[oy * g.ow..(oy + 1) * g.ow];
                let xr = &x[iy * g.w..(iy + 1) * g.w];
                for ox in lo..hi {
                    acc = acc + gr[ox] * xr[g.ix(ox, kx)];
                }
            }
            dk[ky * g.kw + kx] = dk[ky * g.kw + kx] + acc;
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Dense convolution `[N,Cin,H,W] * [Cout,Cin,kh,kw] (+ bias[Cout])`.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let [n, cin, h, w] = dims4(self, "conv2d")?;
        let [cout, wcin, kh, kw] = dims4(weight, "conv2d")?;
        if wcin != cin {
            return Err(Error::dim(
                "conv2d",
                format!("input has {cin} channels, kernel expects {wcin}"),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias shape {:?}, expected [{cout}]", b.shape()),
                ));
            }
        }
        let g = Geom::new(h, w, kh, kw, stride, pad)?;
        let (ip, op, kp) = (h * w, g.oh * g.ow, kh * kw);
        let mut out = vec![T::zero(); n * cout * op];
        {
            let x = self.data();
            let wt = weight.data();
            let bv = bias.map(|b| b.to_vec());
            out.par_chunks_mut(op).enumerate().for_each(|(plane, o)| {
                let (b, co) = (plane / cout, plane % cout);
                if let Some(bv) = &bv {
                    o.iter_mut().for_each(|v| *v = bv[co]);
                }
                for ci in 0..cin {
                    correlate_plane(
                        &x[(b * cin + ci) * ip..(b * cin + ci + 1) * ip],
                        &wt[(co * cin + ci) * kp..(co * cin + ci + 1) * kp],
                        o,
                        &g,
                    );
                }
            });
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            out,
            vec![n, cout, g.oh, g.ow],
            "conv2d",
            inputs,
            Box::new(move |gout, _, inputs| {
                let x = inputs[0].data();
                let wt = inputs[1].data();
                let gx = inputs[0].requires_grad().then(|| {
                    let mut gx = vec![T::zero(); n * cin * ip];
                    gx.par_chunks_mut(ip).enumerate().for_each(|(plane, d)| {
                        let (b, ci) = (plane / cin, plane % cin);
                        for co in 0..cout {
                            correlate_plane_adjoint(
                                &gout[(b * cout + co) * op..(b * cout + co + 1) * op],
                                &wt[(co * cin + ci) * kp..(co * cin + ci + 1) * kp],
                                d,
                                &g,
                            );
                        }
                    });
                    gx
                });
                let gw = inputs[1].requires_grad().then(|| {
                    let mut gw = vec![T::zero(); cout * cin * kp];
                    gw.par_chunks_mut(cin * kp).enumerate().for_each(|(co, dk)| {
                        for b in 0..n {
                            let gp = &gout[(b * cout + co) * op..(b * cout + co + 1) * op];
                            for ci in 0..cin {
                                kernel_grad_plane(
                                    gp,
                                    &x[(b * cin + ci) * ip..(b * cin + ci + 1) * ip],
                                    &mut dk[ci * kp..(ci + 1) * kp],
                                    &g,
                                );
                            }
                        }
                    });
                    gw
                });
                let mut grads = vec![gx, gw];
                if inputs.len() == 3 {
                    grads.push(inputs[2].requires_grad().then(|| {
                        (0..cout)
                            .map(|co| {
                                (0..n)
                                    .flat_map(|b| &gout[(b * cout + co) * op..(b * cout + co + 1) * op])
                                    .copied()
                                    .sum()
                            })
                            .collect()
                    }));
                }
                grads
            }),
        ))
    }

    /// Depthwise convolution: channel `c` of the output sees only channel `c`
    /// of the input. Kernel shape `[C, 1, k, k]`, stride 1, no bias.
    pub fn depthwise_conv2d(&self, weight: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = dims4(self, "depthwise_conv2d")?;
        let [wc, one, kh, kw] = dims4(weight, "depthwise_conv2d")?;
        if wc != c || one != 1 {
            return Err(Error::dim(
                "depthwise_conv2d",
                format!("input has {c} channels, kernel shape {:?}", weight.shape()),
            ));
        }
        let g = Geom::new(h, w, kh, kw, 1, pad)?;
        let (ip, op, kp) = (h * w, g.oh * g.ow, kh * kw);
        let mut out = vec![T::zero(); n * c * op];
        {
            let x = self.data();
            let wt = weight.data();
            out.par_chunks_mut(op).enumerate().for_each(|(plane, o)| {
                let ch = plane % c;
                correlate_plane(&x[plane * ip..(plane + 1) * ip], &wt[ch * kp..(ch + 1) * kp], o, &g);
            });
        }
        Ok(Tensor::from_op(
            out,
            vec![n, c, g.oh, g.ow],
            "depthwise_conv2d",
            vec![self.clone(), weight.clone()],
            Box::new(move |gout, _, inputs| {
                let x = inputs[0].data();
                let wt = inputs[1].data();
                let gx = inputs[0].requires_grad().then(|| {
                    let mut gx = vec![T::zero(); n * c * ip];
                    gx.par_chunks_mut(ip).enumerate().for_each(|(plane, d)| {
                        let ch = plane % c;
                        correlate_plane_adjoint(
                            &gout[plane * op..(plane + 1) * op],
                            &wt[ch * kp..(ch + 1) * kp],
                            d,
                            &g,
                        );
                    });
                    gx
                });
                let gw = inputs[1].requires_grad().then(|| {
                    let mut gw = vec![T::zero(); c * kp];
                    gw.par_chunks_mut(kp).enumerate().for_each(|(ch, dk)| {
                        for b in 0..n {
                            let plane = b * c + ch;
                            kernel_grad_plane(
                                &gout[plane * op..(plane + 1) * op],
                                &x[plane * ip..(plane + 1) * ip],
                                dk,
                                &g,
                            );
                        }
                    });
                    gw
                });
                vec![gx, gw]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Rng, Tensor};

    /// Six nested loops over the textbook definition.
    fn conv_oracle(
        x: &[f64],
        w: &[f64],
        b: &[f64],
        [n, cin, h, wd]: [usize; 4],
        [cout, k]: [usize; 2],
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * cout * oh * ow];
        for bn in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = b[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += w[((co * cin + ci) * k + ky) * k + kx]
                                        * x[((bn * cin + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out[((bn * cout + co) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = Rng::new(1);
        let x = Tensor::<f64>::randn(&[1, 1, 5, 4], 1.0, &mut rng);
        let w = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        let b = Tensor::<f64>::zeros(&[1]);
        assert_eq!(x.conv2d(&w, Some(&b), 1, 0).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn box_sum_interior_and_corner() {
        let x = Tensor::<f64>::ones(&[1, 1, 4, 4]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 1).unwrap().to_vec();
        assert_eq!(y[0], 4.0);
        assert_eq!(y[3], 4.0);
        assert_eq!(y[5], 9.0);
        assert_eq!(y[1], 6.0);
    }

    #[test]
    fn random_matches_nested_loops() {
        let mut rng = Rng::new(2);
        let x = Tensor::<f64>::randn(&[2, 3, 9, 9], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[4, 3, 3, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[4], 1.0, &mut rng);
        for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
            let y = x.conv2d(&w, Some(&b), stride, pad).unwrap();
            let o = conv_oracle(&x.to_vec(), &w.to_vec(), &b.to_vec(), [2, 3, 9, 9], [4, 3], stride, pad);
            let err = y
                .to_vec()
                .iter()
                .zip(&o)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "stride {stride} pad {pad}: {err}");
        }
    }

    #[test]
    fn non_integral_extent_is_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert!(x.conv2d(&w, None, 2, 0).is_err());
    }

    #[test]
    fn depthwise_center_kernel_is_identity() {
        let mut rng = Rng::new(3);
        let x = Tensor::<f64>::randn(&[2, 3, 5, 5], 1.0, &mut rng);
        let w = Tensor::<f64>::from_fn(&[3, 1, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 });
        assert_eq!(x.depthwise_conv2d(&w, 1).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn depthwise_channel_isolation() {
        let mut rng = Rng::new(4);
        let x = Tensor::<f64>::randn(&[1, 3, 4, 4], 1.0, &mut rng);
        let w = Tensor::<f64>::from_fn(&[3, 1, 3, 3], |i| if i >= 9 && i % 9 == 4 { 1.0 } else { 0.0 });
        let y = x.depthwise_conv2d(&w, 1).unwrap().to_vec();
        let xv = x.to_vec();
        assert!(y[..16].iter().all(|&v| v == 0.0));
        assert_eq!(&y[16..], &xv[16..]);
    }

    #[test]
    fn depthwise_matches_grouped_oracle() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::randn(&[2, 3, 6, 7], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[3, 1, 3, 3], 1.0, &mut rng);
        let y = x.depthwise_conv2d(&w, 1).unwrap().to_vec();
        let (xv, wv) = (x.to_vec(), w.to_vec());
        for b in 0..2 {
            for c in 0..3 {
                let xs = &xv[(b * 3 + c) * 42..(b * 3 + c + 1) * 42];
                let ws = &wv[c * 9..(c + 1) * 9];
                let o = conv_oracle(xs, ws, &[0.0], [1, 1, 6, 7], [1, 3], 1, 1);
                let got = &y[(b * 3 + c) * 42..(b * 3 + c + 1) * 42];
                let err = got.iter().zip(&o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-10);
            }
        }
    }

    #[test]
    fn depthwise_channel_mismatch_is_error() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
        assert!(x.depthwise_conv2d(&w, 1).is_err());
    }
}

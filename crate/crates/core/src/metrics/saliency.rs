use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::Module;
use crate::tensor::Tensor;
use crate::training::reconstruction_loss;

/// Normalized input-gradient map of one LR image.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// `[H, W, 1]` in `[0, 1]`.
    pub map: Tensor,
    /// Per-pixel max over channels of `|dL/d lr|` before normalization,
    /// row-major `H x W`.
    pub raw: Vec<f64>,
    /// Colour rendering, `[3, H, W]`.
    pub color: Tensor,
}

impl SaliencyMap {
    pub fn height(&self) -> usize {
        self.map.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.map.shape()[1]
    }
}

/// Back-propagates the L1 reconstruction loss between `hr` and `G(lr)` to
/// the LR pixels, reduces the three channels by max `|grad|` and min-max
/// normalizes. Inputs whose size is not a multiple of the generator's are
/// replicate-padded and the output cropped, as in inference. The
/// generator's parameters receive no gradient.
pub fn saliency_map(gen: &Generator, lr: &Tensor, hr: &Tensor) -> Result<SaliencyMap> {
    let [3, h, w] = *lr.shape() else {
        return Err(Error::dim(
            "saliency_map",
            format!("lr must be [3, H, W], got {:?}", lr.shape()),
        ));
    };
    if hr.shape() != [3, 2 * h, 2 * w] {
        return Err(Error::dim(
            "saliency_map",
            format!("hr {:?} is not 2x lr {:?}", hr.shape(), lr.shape()),
        ));
    }
    let m = gen.config().size_multiple();
    let (ph, pw) = (h.div_ceil(m) * m - h, w.div_ceil(m) * m - w);

    let params = gen.params();
    let tracked: Vec<bool> = params.iter().map(|p| p.requires_grad()).collect();
    params.iter().for_each(|p| p.set_requires_grad(false));
    let x = Tensor::new(lr.to_vec(), &[1, 3, h, w])?.with_grad();
    let run = || -> Result<()> {
        let xp = if ph + pw > 0 {
            x.pad_replicate(ph, pw)?
        } else {
            x.clone()
        };
        let sr = gen.forward(&xp)?;
        let sr = if ph + pw > 0 {
            sr.narrow(2, 0, 2 * h)?.narrow(3, 0, 2 * w)?
        } else {
            sr
        };
        let target = hr.reshape(&[1, 3, 2 * h, 2 * w])?;
        reconstruction_loss(&target, &sr)?.backward()
    };
    let res = run();
    for (p, on) in params.iter().zip(tracked) {
        p.set_requires_grad(on);
    }
    res?;

    let g = x.grad().unwrap_or_else(|| vec![0.0; 3 * h * w]);
    let plane = h * w;
    let raw: Vec<f64> = (0..plane)
        .map(|i| (0..3).map(|c| (g[c * plane + i] as f64).abs()).fold(0.0, f64::max))
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm: Vec<f64> = if hi > lo {
        raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; plane]
    };
    let map = Tensor::from_f64(&norm, &[h, w, 1])?;
    let color = render_colormap(&map)?;
    Ok(SaliencyMap { map, raw, color })
}

/// Piecewise-linear blue -> green -> red colormap, quantized to 8 bits.
///
/// For `v <= 0.5`: `(0, 2v, 1 - 2v)`; above: `(2v - 1, 2 - 2v, 0)`. Each
/// component is rounded to the nearest multiple of `1/255`.
pub fn render_colormap(map: &Tensor) -> Result<Tensor> {
    let (h, w) = match *map.shape() {
        [h, w, 1] | [h, w] => (h, w),
        _ => {
            return Err(Error::dim(
                "render_colormap",
                format!("expected [H, W, 1], got {:?}", map.shape()),
            ))
        }
    };
    let v = map.to_f64_vec();
    if let Some((i, &bad)) = v.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Precondition(format!(
            "colormap value {bad} at index {i} is outside [0, 1]"
        )));
    }
    let plane = h * w;
    let q = |x: f64| ((x * 255.0).round() / 255.0) as f32;
    let mut out = vec![0f32; 3 * plane];
    for (i, &x) in v.iter().enumerate() {
        let (r, g, b) = if x <= 0.5 {
            (0.0, 2.0 * x, 1.0 - 2.0 * x)
        } else {
            (2.0 * x - 1.0, 2.0 - 2.0 * x, 0.0)
        };
        out[i] = q(r);
        out[plane + i] = q(g);
        out[2 * plane + i] = q(b);
    }
    Tensor::new(out, &[3, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::quantize;
    use crate::generator::GeneratorConfig;
    use crate::tensor::Rng;

    fn keys(x: f64) -> f64 {
        let a = -0.5;
        let t = x.abs();
        if t < 1.0 {
            (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
        } else if t < 2.0 {
            a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
        } else {
            0.0
        }
    }

    /// `[out, in]` matrix of 2x Catmull-Rom upsampling with half-pixel
    /// centres and clamped edges.
    fn upsample_matrix(n: usize) -> Vec<Vec<f64>> {
        (0..2 * n)
            .map(|o| {
                let src = (o as f64 + 0.5) / 2.0 - 0.5;
                let base = src.floor() as i64;
                let mut row = vec![0.0; n];
                for k in -1..=2 {
                    let j = (base + k).clamp(0, n as i64 - 1) as usize;
                    row[j] += keys(src - (base + k) as f64);
                }
                row
            })
            .collect()
    }

    #[test]
    fn zero_weight_map_matches_bicubic_adjoint() {
        let gen = Generator::new(&GeneratorConfig::tiny(), &mut Rng::new(1)).unwrap();
        gen.zero_weights();
        let mut rng = Rng::new(2);
        let lr = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng);
        let hr = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let s = saliency_map(&gen, &lr, &hr).unwrap();

        let m = upsample_matrix(8);
        let (l, t) = (lr.to_f64_vec(), hr.to_f64_vec());
        let n = (3 * 16 * 16) as f64;
        let mut raw = vec![0.0f64; 64];
        for c in 0..3 {
            let mut sign = vec![0.0; 256];
            for oy in 0..16 {
                for ox in 0..16 {
                    let mut v = 0.0;
                    for iy in 0..8 {
                        for ix in 0..8 {
                            v += m[oy][iy] * m[ox][ix] * l[c * 64 + iy * 8 + ix];
                        }
                    }
                    sign[oy * 16 + ox] = (v - t[c * 256 + oy * 16 + ox]).signum();
                }
            }
            for iy in 0..8 {
                for ix in 0..8 {
                    let mut g = 0.0;
                    for oy in 0..16 {
                        for ox in 0..16 {
                            g += m[oy][iy] * m[ox][ix] * sign[oy * 16 + ox];
                        }
                    }
                    raw[iy * 8 + ix] = raw[iy * 8 + ix].max((g / n).abs());
                }
            }
        }
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, 0f64), |(a, b), &v| (a.min(v), b.max(v)));
        for (i, got) in s.map.to_f64_vec().iter().enumerate() {
            assert!((got - (raw[i] - lo) / (hi - lo)).abs() < 1e-4, "pixel {i}");
        }
        assert!(gen.params().iter().all(|p| p.grad().is_none()));
    }

    #[test]
    fn map_is_normalized_with_lr_shape() {
        let gen = Generator::new(&GeneratorConfig::tiny(), &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(4);
        let lr = Tensor::rand_uniform(&[3, 10, 12], 0.0, 1.0, &mut rng);
        let hr = Tensor::rand_uniform(&[3, 20, 24], 0.0, 1.0, &mut rng);
        let s = saliency_map(&gen, &lr, &hr).unwrap();
        assert_eq!(s.map.shape(), &[10, 12, 1]);
        let v = s.map.to_f64_vec();
        assert_eq!(v.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(v.iter().copied().fold(0.0, f64::max), 1.0);
        assert!(matches!(saliency_map(&gen, &lr, &lr), Err(Error::Dimension { .. })));
    }

    #[test]
    fn colormap_endpoints_and_midpoint() {
        let m = Tensor::from_f64(&[0.0, 1.0, 0.5, 0.25], &[2, 2, 1]).unwrap();
        let c = render_colormap(&m).unwrap().to_vec();
        let px = |i: usize| [quantize(c[i]), quantize(c[4 + i]), quantize(c[8 + i])];
        assert_eq!(px(0), [0, 0, 255]);
        assert_eq!(px(1), [255, 0, 0]);
        assert_eq!(px(2), [0, 255, 0]);
        assert_eq!(px(3), [0, 128, 128]);
        let bad = Tensor::from_f64(&[1.5], &[1, 1, 1]).unwrap();
        assert!(matches!(render_colormap(&bad), Err(Error::Precondition(_))));
    }
}

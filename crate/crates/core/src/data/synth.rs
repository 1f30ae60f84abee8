//! Deterministic synthetic images for tests, examples and smoke runs.

use std::path::Path;

use super::image::save_image;
use crate::error::Result;
use crate::tensor::{Rng, Tensor};

/// Smooth colour texture: a few random planar waves per channel, mapped
/// into `[0.1, 0.9]`.
pub fn smooth_texture(h: usize, w: usize, rng: &mut Rng) -> Tensor {
    wave_texture(h, w, 0.5, 3.0, rng)
}

/// Like [`smooth_texture`] with 3 to 12 cycles per image, enough detail
/// that bicubic upscaling visibly blurs it.
pub fn detailed_texture(h: usize, w: usize, rng: &mut Rng) -> Tensor {
    wave_texture(h, w, 3.0, 12.0, rng)
}

/// Sum of three random planar waves per channel with frequencies in
/// `[lo, hi)` cycles per image, mapped into `[0.1, 0.9]`.
pub fn wave_texture(h: usize, w: usize, lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            let freq = rng.uniform_range(lo, hi) * std::f64::consts::TAU;
            let angle = rng.uniform_range(0.0, std::f64::consts::PI);
            [
                freq * angle.cos(),
                freq * angle.sin(),
                rng.uniform_range(0.0, 6.3),
                rng.uniform_range(0.5, 1.0),
            ]
        })
        .collect();
    let plane = h * w;
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        let (y, x) = ((p / w) as f64 / h as f64, (p % w) as f64 / w as f64);
        let (s, norm) = waves[c * 3..c * 3 + 3].iter().fold((0.0, 0.0), |(s, n), wv| {
            (s + wv[3] * (wv[0] * x + wv[1] * y + wv[2]).sin(), n + wv[3])
        });
        (0.5 + 0.4 * s / norm) as f32
    })
}

/// Left half flat mid-grey, right half a black/white checkerboard with
/// squares of `square` pixels.
pub fn flat_and_checker(h: usize, w: usize, square: usize) -> Tensor {
    let plane = h * w;
    Tensor::from_fn(&[3, h, w], |i| {
        let p = i % plane;
        let (y, x) = (p / w, p % w);
        if x < w / 2 {
            0.5
        } else if ((y / square) + (x / square)).is_multiple_of(2) {
            0.15
        } else {
            0.85
        }
    })
}

/// Writes `n` random textures of `size x size` to `dir/img_<i>.png`.
pub fn write_texture_corpus(dir: impl AsRef<Path>, n: usize, size: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let rng = Rng::new(seed);
    for i in 0..n {
        let img = smooth_texture(size, size, &mut rng.fork(i as u64));
        save_image(&img, dir.join(format!("img_{i:03}.png")))?;
    }
    Ok(())
}

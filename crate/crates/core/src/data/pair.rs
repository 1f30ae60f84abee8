use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::{no_grad, Rng, Tensor};

/// Bicubic (Catmull-Rom, half-pixel centres, edge clamp) resize of a
/// `[C, H, W]` or `[N, C, H, W]` image. Shared by LR synthesis, the
/// generator's skip path and discriminator conditioning.
pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    no_grad(|| img.resize_bicubic(out_h, out_w))
}

/// Aligned low/high resolution images, `hr` exactly `scale` times `lr`.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub lr: Tensor,
    pub hr: Tensor,
    pub scale: usize,
    pub source: Option<PathBuf>,
}

fn hw(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(Error::dim(
            "image_pair",
            format!("{what} must be [3, H, W], got {:?}", t.shape()),
        )),
    }
}

impl ImagePair {
    pub fn new(lr: Tensor, hr: Tensor, scale: usize) -> Result<Self> {
        let (lh, lw) = hw(&lr, "lr")?;
        let (hh, hw_) = hw(&hr, "hr")?;
        if hh != scale * lh || hw_ != scale * lw {
            return Err(Error::dim(
                "image_pair",
                format!("hr {hh}x{hw_} is not {scale}x lr {lh}x{lw}"),
            ));
        }
        Ok(ImagePair {
            lr,
            hr,
            scale,
            source: None,
        })
    }

    pub fn lr_size(&self) -> (usize, usize) {
        (self.lr.shape()[1], self.lr.shape()[2])
    }
}

/// Synthesizes the LR image by bicubic downscaling.
pub fn make_pair(hr: &Tensor, scale: usize) -> Result<ImagePair> {
    let (h, w) = hw(hr, "hr")?;
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::Precondition(format!(
            "hr extent {h}x{w} is not divisible by scale {scale}"
        )));
    }
    let lr = bicubic_resize(hr, h / scale, w / scale)?;
    ImagePair::new(lr, hr.clone(), scale)
}

/// Crops a `crop x crop` LR window at `(y, x)` and the matching
/// `scale * crop` HR window at `(scale * y, scale * x)`.
pub fn crop_pair_at(pair: &ImagePair, crop: usize, y: usize, x: usize) -> Result<ImagePair> {
    let (h, w) = pair.lr_size();
    if crop == 0 || y + crop > h || x + crop > w {
        return Err(Error::Precondition(format!(
            "crop {crop} at ({y}, {x}) does not fit lr {h}x{w}"
        )));
    }
    let s = pair.scale;
    let lr = pair.lr.narrow(1, y, crop)?.narrow(2, x, crop)?.detach();
    let hr = pair.hr.narrow(1, s * y, s * crop)?.narrow(2, s * x, s * crop)?.detach();
    Ok(ImagePair {
        lr,
        hr,
        scale: s,
        source: pair.source.clone(),
    })
}

/// Random aligned crop; the offset is drawn uniformly from `rng`.
pub fn crop_pair(pair: &ImagePair, crop: usize, rng: &mut Rng) -> Result<ImagePair> {
    let (h, w) = pair.lr_size();
    if crop == 0 || crop > h || crop > w {
        return Err(Error::Precondition(format!("crop {crop} larger than lr {h}x{w}")));
    }
    let y = rng.below(h - crop + 1);
    let x = rng.below(w - crop + 1);
    crop_pair_at(pair, crop, y, x)
}

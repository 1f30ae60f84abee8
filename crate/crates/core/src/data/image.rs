//! 8-bit image codecs: binary PPM (P6), PGM (P5) and PNG.
//!
//! Decoded images are `[3, H, W]` tensors in `[0, 1]` (grayscale is
//! replicated to three channels). Encoding quantizes with
//! `floor(clamp(v, 0, 1) * 255 + 0.5)`.

use std::fs;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ColorType, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// File extensions recognised as images, lower-case.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pgm"];

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// 8-bit quantization with round-half-up and clamping.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

fn decode_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Planar `[c, H, W]` tensor from interleaved 8-bit samples, promoted to
/// three channels when `c == 1`.
fn from_interleaved(bytes: &[u8], channels: usize, w: usize, h: usize) -> Tensor {
    let plane = w * h;
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        let src = if channels == 1 { p } else { p * channels + c };
        bytes[src] as f32 / 255.0
    })
}

struct Netpbm<'a> {
    magic: [u8; 2],
    w: usize,
    h: usize,
    maxval: u32,
    pixels: &'a [u8],
}

fn parse_netpbm<'a>(bytes: &'a [u8], path: &Path) -> Result<Netpbm<'a>> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(decode_err(path, "not a netpbm file"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for f in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(decode_err(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err(path, "bad header field"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(decode_err(path, "missing raster separator"));
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 {
        return Err(decode_err(path, "zero extent or maxval"));
    }
    Ok(Netpbm {
        magic,
        w: w as usize,
        h: h as usize,
        maxval,
        pixels: &bytes[pos + 1..],
    })
}

fn decode_netpbm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let p = parse_netpbm(bytes, path)?;
    let channels = match &p.magic {
        b"P6" => 3,
        b"P5" => 1,
        m => {
            return Err(decode_err(
                path,
                format!("unsupported netpbm type {}", String::from_utf8_lossy(m)),
            ))
        }
    };
    if p.maxval > 255 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth: 16,
        });
    }
    if p.maxval != 255 {
        return Err(decode_err(path, format!("maxval {} (only 255 is supported)", p.maxval)));
    }
    let need = p.w * p.h * channels;
    if p.pixels.len() < need {
        return Err(decode_err(
            path,
            format!("raster has {} bytes, expected {need}", p.pixels.len()),
        ));
    }
    Ok(from_interleaved(&p.pixels[..need], channels, p.w, p.h))
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::L8 | ColorType::La8 => Ok(from_interleaved(img.to_luma8().as_raw(), 1, w, h)),
        ColorType::Rgb8 | ColorType::Rgba8 => Ok(from_interleaved(img.to_rgb8().as_raw(), 3, w, h)),
        other => Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth: other.bits_per_pixel() as u32 / other.channel_count() as u32,
        }),
    }
}

/// Loads a PNG, PPM (P6) or PGM (P5) file as a `[3, H, W]` tensor.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else if bytes.starts_with(b"P") {
        decode_netpbm(&bytes, path)
    } else {
        Err(decode_err(path, "unrecognised image format"))
    }
}

/// Interleaved 8-bit samples of a `[c, H, W]` tensor, `c` in {1, 3}.
fn to_interleaved(img: &Tensor) -> Result<(Vec<u8>, usize, usize, usize)> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        [1, c, h, w] if c == 1 || c == 3 => (c, h, w),
        _ => {
            return Err(Error::dim(
                "save_image",
                format!("expected [1|3, H, W], got {:?}", img.shape()),
            ))
        }
    };
    let data = img.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(data[ch * plane + p]));
        }
    }
    Ok((out, c, h, w))
}

/// Encodes to bytes in the format named by `ext` (`ppm`, `pgm` or `png`).
/// PPM requires three channels, PGM one.
pub fn encode_image(img: &Tensor, ext: &str) -> Result<Vec<u8>> {
    let (px, c, h, w) = to_interleaved(img)?;
    match (ext, c) {
        ("ppm", 3) | ("pgm", 1) => {
            let mut out = format!("{}\n{w} {h}\n255\n", if c == 3 { "P6" } else { "P5" }).into_bytes();
            out.extend(px);
            Ok(out)
        }
        ("png", _) => {
            let mut out = Vec::new();
            let color = if c == 3 {
                ExtendedColorType::Rgb8
            } else {
                ExtendedColorType::L8
            };
            PngEncoder::new(&mut out)
                .write_image(&px, w as u32, h as u32, color)
                .map_err(|e| Error::Usage(format!("png encoding failed: {e}")))?;
            Ok(out)
        }
        _ => Err(Error::Usage(format!("cannot write a {c}-channel image as .{ext}"))),
    }
}

/// Saves a `[3, H, W]` or `[1, H, W]` tensor. The format follows the file
/// extension; single-channel images go to `.pgm` or `.png`.
pub fn save_image(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = encode_image(img, &ext)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Single-channel view of a decoded image (first channel).
pub fn first_channel(img: &Tensor) -> Result<Tensor> {
    img.narrow(0, 0, 1)
}

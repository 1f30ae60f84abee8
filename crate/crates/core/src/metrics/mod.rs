//! Image quality metrics and gradient saliency maps.

mod saliency;

pub use saliency::{render_colormap, saliency_map, SaliencyMap};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{bicubic_resize, ImagePair};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB. Identical images give `f64::INFINITY`.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, max_val: f64) -> Result<f64> {
    same_shape("psnr", a, b)?;
    if !(max_val > 0.0) {
        return Err(Error::Precondition(format!(
            "psnr max_val must be positive, got {max_val}"
        )));
    }
    let (x, y) = (a.to_f64_vec(), b.to_f64_vec());
    let mse = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" Gaussian filter of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Extents of a single-channel image given as `[H, W]` or `[1, H, W]`.
fn plane_dims<T: Element>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(Error::dim("ssim", format!("expected one channel, got {:?}", t.shape()))),
    }
}

/// Structural similarity of two single-channel images on a `[0, 1]` scale,
/// averaged over every valid window position.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (h, w) = plane_dims(a)?;
    ssim_plane(&a.to_f64_vec(), &b.to_f64_vec(), h, w)
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Precondition(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &g);
    let my = filter_valid(y, h, w, &g);
    let sxx = filter_valid(&prod(x, x), h, w, &g);
    let syy = filter_valid(&prod(y, y), h, w, &g);
    let sxy = filter_valid(&prod(x, y), h, w, &g);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// BT.601 luma of a `[3, H, W]` image as `[1, H, W]`.
pub fn luma<T: Element>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let [3, h, w] = *img.shape() else {
        return Err(Error::dim("luma", format!("expected [3, H, W], got {:?}", img.shape())));
    };
    let v = img.to_f64_vec();
    let plane = h * w;
    let y: Vec<f64> = (0..plane)
        .map(|i| LUMA_WEIGHTS[0] * v[i] + LUMA_WEIGHTS[1] * v[plane + i] + LUMA_WEIGHTS[2] * v[2 * plane + i])
        .collect();
    Tensor::from_f64(&y, &[1, h, w])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// PSNR over all channels, SSIM averaged over channels.
    #[default]
    Rgb,
    /// Both metrics on the BT.601 luma plane.
    Luma,
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(ChannelMode::Rgb),
            "luma" | "y" => Ok(ChannelMode::Luma),
            _ => Err(Error::Usage(format!(
                "unknown channel mode '{s}' (expected rgb or luma)"
            ))),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Rgb => "rgb",
            ChannelMode::Luma => "luma",
        })
    }
}

/// PSNR and SSIM of a `[3, H, W]` pair under `mode`.
pub fn image_metrics(a: &Tensor, b: &Tensor, mode: ChannelMode) -> Result<(f64, f64)> {
    same_shape("image_metrics", a, b)?;
    let [c, h, w] = *a.shape() else {
        return Err(Error::dim(
            "image_metrics",
            format!("expected [C, H, W], got {:?}", a.shape()),
        ));
    };
    match mode {
        ChannelMode::Rgb => {
            let (x, y) = (a.to_f64_vec(), b.to_f64_vec());
            let plane = h * w;
            let s = (0..c)
                .map(|k| ssim_plane(&x[k * plane..(k + 1) * plane], &y[k * plane..(k + 1) * plane], h, w))
                .sum::<Result<f64>>()?;
            Ok((psnr(a, b, 1.0)?, s / c as f64))
        }
        ChannelMode::Luma => {
            let (ya, yb) = (luma(a)?, luma(b)?);
            Ok((psnr(&ya, &yb, 1.0)?, ssim(&ya, &yb)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Bicubic upscaling scored against the same reference.
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
}

/// Per-image metrics with dataset means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mode: ChannelMode,
    pub rows: Vec<MetricRow>,
}

pub const REPORT_HEADER: &str = "image\tpsnr\tssim\tbicubic_psnr\tbicubic_ssim";

impl MetricReport {
    /// Arithmetic means of (psnr, ssim, bicubic_psnr, bicubic_ssim).
    pub fn means(&self) -> [f64; 4] {
        let n = self.rows.len() as f64;
        let mut m = [0.0; 4];
        for r in &self.rows {
            m[0] += r.psnr;
            m[1] += r.ssim;
            m[2] += r.bicubic_psnr;
            m[3] += r.bicubic_ssim;
        }
        m.map(|v| v / n)
    }

    /// Tab-separated table: the header, one row per image, a `mean` row
    /// and a closing `# mode=` line. Values use shortest round-trip
    /// formatting.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            s += &format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.name, r.psnr, r.ssim, r.bicubic_psnr, r.bicubic_ssim
            );
        }
        let m = self.means();
        s += &format!("mean\t{}\t{}\t{}\t{}\n# mode={}\n", m[0], m[1], m[2], m[3], self.mode);
        s
    }

    /// Parses [`to_tsv`](Self::to_tsv) output; returns the report and the
    /// stored mean row.
    pub fn from_tsv(text: &str) -> Result<(Self, [f64; 4])> {
        let bad = |m: String| Error::Decode {
            path: "<report>".into(),
            msg: m,
        };
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(bad("missing header".into()));
        }
        let mut rows = Vec::new();
        let mut means = None;
        let mut mode = None;
        for l in lines {
            if let Some(m) = l.strip_prefix("# mode=") {
                mode = Some(m.parse()?);
                continue;
            }
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields: {l}")));
            }
            let mut v = [0.0; 4];
            for (i, s) in f[1..].iter().enumerate() {
                v[i] = s.parse().map_err(|_| bad(format!("bad number '{s}'")))?;
            }
            if f[0] == "mean" {
                means = Some(v);
            } else {
                rows.push(MetricRow {
                    name: f[0].to_string(),
                    psnr: v[0],
                    ssim: v[1],
                    bicubic_psnr: v[2],
                    bicubic_ssim: v[3],
                });
            }
        }
        let means = means.ok_or_else(|| bad("missing mean row".into()))?;
        let mode = mode.ok_or_else(|| bad("missing mode line".into()))?;
        Ok((MetricReport { mode, rows }, means))
    }
}

/// Scores `model` on every pair against HR, alongside bicubic upscaling
/// of the same LR input. Rows are named after the pair's source file.
pub fn evaluate_pairs(
    pairs: &[ImagePair],
    mode: ChannelMode,
    mut model: impl FnMut(&ImagePair) -> Result<Tensor>,
) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let name = p
            .source
            .as_ref()
            .and_then(|s| s.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("#{i}"));
        let [_, h, w] = *p.hr.shape() else {
            unreachable!("pairs hold [3, H, W] images")
        };
        let sr = model(p)?;
        let bic = bicubic_resize(&p.lr, h, w)?.clamp(0.0, 1.0);
        let (ps, ss) = image_metrics(&sr, &p.hr, mode)?;
        let (pb, sb) = image_metrics(&bic, &p.hr, mode)?;
        rows.push(MetricRow {
            name,
            psnr: ps,
            ssim: ss,
            bicubic_psnr: pb,
            bicubic_ssim: sb,
        });
    }
    Ok(MetricReport { mode, rows })
}

//! Vision-transformer discriminator over overlapping patches of the image
//! concatenated with its conditioning upscale.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, LayerNorm, Linear, Module, PROJ_STD};
use crate::tensor::ops::layout::dims4;
use crate::tensor::{Element, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    /// Defaults to half the patch size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride_h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride_w: Option<usize>,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub dropout: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            image_size: 128,
            in_channels: 6,
            patch_size: 16,
            stride_h: None,
            stride_w: None,
            embed_dim: 384,
            depth: 4,
            heads: 6,
            mlp_ratio: 4.0,
            dropout: 0.0,
        }
    }
}

impl DiscriminatorConfig {
    /// Small configuration used in tests: 32px images, 8px patches at
    /// stride 4, width 32, two blocks.
    pub fn tiny() -> Self {
        DiscriminatorConfig {
            image_size: 32,
            patch_size: 8,
            embed_dim: 32,
            depth: 2,
            heads: 2,
            ..Default::default()
        }
    }

    pub fn strides(&self) -> (usize, usize) {
        let half = (self.patch_size / 2).max(1);
        (self.stride_h.unwrap_or(half), self.stride_w.unwrap_or(half))
    }

    /// Patches along each axis.
    pub fn grid(&self) -> (usize, usize) {
        let (sh, sw) = self.strides();
        let span = self.image_size - self.patch_size;
        (span / sh + 1, span / sw + 1)
    }

    pub fn num_patches(&self) -> usize {
        let (a, b) = self.grid();
        a * b
    }

    /// Flattened patch length `k * k * c`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn mlp_dim(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (sh, sw) = self.strides();
        if self.patch_size == 0 || self.patch_size > self.image_size {
            return bad(format!(
                "patch_size {} must be in 1..={}",
                self.patch_size, self.image_size
            ));
        }
        if sh == 0 || sw == 0 {
            return bad("strides must be positive".into());
        }
        let span = self.image_size - self.patch_size;
        if !span.is_multiple_of(sh) || !span.is_multiple_of(sw) {
            return bad(format!(
                "strides ({sh}, {sw}) do not tile image_size {} with patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.in_channels == 0 || self.depth == 0 {
            return bad("in_channels and depth must be positive".into());
        }
        if self.heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if self.mlp_dim() == 0 {
            return bad(format!("mlp_ratio {} too small", self.mlp_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Cuts `[N, c, H, W]` into `k x k` patches at strides `(sh, sw)`, scanned
/// row-major, each flattened channel-major then row-major: `[N, Np, k*k*c]`.
pub fn extract_patches<T: Element>(img: &Tensor<T>, k: usize, sh: usize, sw: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(img, "extract_patches")?;
    if k == 0 || k > h || k > w || sh == 0 || sw == 0 || !(h - k).is_multiple_of(sh) || !(w - k).is_multiple_of(sw) {
        return Err(Error::dim(
            "extract_patches",
            format!("{k}x{k} patches at stride ({sh}, {sw}) do not tile {h}x{w}"),
        ));
    }
    let (gh, gw) = ((h - k) / sh + 1, (w - k) / sw + 1);
    let d = k * k * c;
    let mut map = Vec::with_capacity(n * gh * gw * d);
    for b in 0..n {
        for py in 0..gh {
            for px in 0..gw {
                for ch in 0..c {
                    for dy in 0..k {
                        let row = ((b * c + ch) * h + py * sh + dy) * w + px * sw;
                        map.extend(row..row + k);
                    }
                }
            }
        }
    }
    Ok(img.gather(Arc::new(map), vec![n, gh * gw, d], "extract_patches"))
}

/// Inverted dropout: zeroes with probability `p`, scales survivors by
/// `1 / (1 - p)`.
fn dropout<T: Element>(x: &Tensor<T>, p: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(x.shape(), |_| if rng.uniform() < p { T::zero() } else { T::of(keep) });
    x.mul(&mask)
}

/// Pre-norm multi-head self-attention block with an MLP.
#[derive(Debug, Clone)]
pub struct VitBlock<T: Element = f32> {
    pub norm1: LayerNorm<T>,
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wa: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub mlp_in: Linear<T>,
    pub mlp_out: Linear<T>,
    pub heads: usize,
}

impl<T: Element> VitBlock<T> {
    pub fn new(dim: usize, heads: usize, mlp_dim: usize, rng: &mut Rng) -> Self {
        VitBlock {
            norm1: LayerNorm::new(dim),
            wq: Linear::new(dim, dim, false, rng),
            wk: Linear::new(dim, dim, false, rng),
            wv: Linear::new(dim, dim, false, rng),
            wa: Linear::new(dim, dim, false, rng),
            norm2: LayerNorm::new(dim),
            mlp_in: Linear::new(dim, mlp_dim, true, rng),
            mlp_out: Linear::new(mlp_dim, dim, true, rng),
            heads,
        }
    }

    /// Attention weights `[N, heads, T, T]` and the merged per-head outputs
    /// `[N, T, D]` before the output projection.
    pub fn attend(&self, h: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (n, t, d) = match *h.shape() {
            [n, t, d] => (n, t, d),
            _ => return Err(Error::dim("mhsa", format!("expected [N, T, D], got {:?}", h.shape()))),
        };
        let a = d / self.heads;
        let l = self.norm1.forward(h)?;
        let split = |x: Tensor<T>| x.reshape(&[n, t, self.heads, a])?.permute(&[0, 2, 1, 3]);
        let q = split(self.wq.forward(&l)?)?;
        let k = split(self.wk.forward(&l)?)?;
        let v = split(self.wv.forward(&l)?)?;
        let attn = q
            .matmul(&k.transpose_last2()?)?
            .scale(1.0 / (a as f64).sqrt())
            .softmax_lastdim()?;
        let merged = attn.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[n, t, d])?;
        Ok((attn, merged))
    }

    pub fn forward(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, merged) = self.attend(h)?;
        let fr = h.add(&self.wa.forward(&merged)?)?;
        let m = self
            .mlp_out
            .forward(&self.mlp_in.forward(&self.norm2.forward(&fr)?)?.gelu())?;
        fr.add(&m)
    }
}

impl<T: Element> Module<T> for VitBlock<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm1.visit_params(&join(prefix, "norm1"), f);
        self.wq.visit_params(&join(prefix, "wq"), f);
        self.wk.visit_params(&join(prefix, "wk"), f);
        self.wv.visit_params(&join(prefix, "wv"), f);
        self.wa.visit_params(&join(prefix, "wa"), f);
        self.norm2.visit_params(&join(prefix, "norm2"), f);
        self.mlp_in.visit_params(&join(prefix, "mlp_in"), f);
        self.mlp_out.visit_params(&join(prefix, "mlp_out"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Element = f32> {
    cfg: DiscriminatorConfig,
    /// Patch projection `[d, de]`, no bias.
    pub patch_embed: Linear<T>,
    pub cls_token: Tensor<T>,
    pub pos_embed: Tensor<T>,
    pub blocks: Vec<VitBlock<T>>,
    pub norm: LayerNorm<T>,
    pub head: Linear<T>,
}

impl<T: Element> Discriminator<T> {
    pub fn new(cfg: &DiscriminatorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let de = cfg.embed_dim;
        let patch_embed = Linear::new(cfg.patch_dim(), de, false, rng);
        let cls_token = Tensor::randn(&[1, de], PROJ_STD, rng).with_grad();
        let pos_embed = Tensor::zeros(&[cfg.num_patches() + 1, de]).with_grad();
        let blocks = (0..cfg.depth)
            .map(|_| VitBlock::new(de, cfg.heads, cfg.mlp_dim(), rng))
            .collect();
        Ok(Discriminator {
            cfg: cfg.clone(),
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm: LayerNorm::new(de),
            head: Linear::new(de, 1, true, rng),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    /// Token embeddings `[N, Np + 1, de]`, class token first. Dropout is
    /// applied only when `train_rng` is given and the rate is non-zero.
    pub fn embed(&self, patches: &Tensor<T>, train_rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        let n = patches.shape()[0];
        let de = self.cfg.embed_dim;
        let pe = self.patch_embed.forward(patches)?;
        let cls = self.cls_token.broadcast_to(&[n, 1, de])?;
        let ee = Tensor::concat(&[cls, pe], 1)?;
        let fe = ee.add(&self.pos_embed.broadcast_to(ee.shape())?)?;
        match train_rng {
            Some(rng) if self.cfg.dropout > 0.0 => dropout(&fe, self.cfg.dropout, rng),
            _ => Ok(fe),
        }
    }

    /// Final-block tokens after the closing layer norm.
    pub fn encode(&self, fe: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.blocks.iter().try_fold(fe.clone(), |h, b| b.forward(&h))?;
        self.norm.forward(&h)
    }

    /// Real-vs-generated logits `[N, 1]` for `img` conditioned on `cond`.
    pub fn forward_logits(&self, img: &Tensor<T>, cond: &Tensor<T>, train_rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        let [n, ci, h, w] = dims4(img, "discriminator")?;
        if cond.shape() != img.shape() {
            return Err(Error::dim(
                "discriminator",
                format!("image {:?} and condition {:?} differ", img.shape(), cond.shape()),
            ));
        }
        let m = self.cfg.image_size;
        if h != m || w != m || 2 * ci != self.cfg.in_channels {
            return Err(Error::dim(
                "discriminator",
                format!(
                    "built for {m}x{m} with {} channels, got {h}x{w} with {}",
                    self.cfg.in_channels,
                    2 * ci
                ),
            ));
        }
        let (sh, sw) = self.cfg.strides();
        let x = Tensor::concat_channels(&[img.clone(), cond.clone()])?;
        let patches = extract_patches(&x, self.cfg.patch_size, sh, sw)?;
        let tokens = self.encode(&self.embed(&patches, train_rng)?)?;
        let cls = tokens.narrow(1, 0, 1)?.reshape(&[n, self.cfg.embed_dim])?;
        self.head.forward(&cls)
    }

    /// Probability that `img` is a real high-resolution image, `[N, 1]`.
    pub fn forward(&self, img: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_logits(img, cond, None)?.sigmoid())
    }
}

impl<T: Element> Module<T> for Discriminator<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.patch_embed.visit_params(&join(prefix, "patch_embed"), f);
        f(join(prefix, "cls_token"), &self.cls_token);
        f(join(prefix, "pos_embed"), &self.pos_embed);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check_leaves;

    #[test]
    fn patch_count_formula() {
        let cfg = DiscriminatorConfig::default();
        assert_eq!(cfg.num_patches(), 225);
        let img = Tensor::<f32>::zeros(&[1, 6, 128, 128]);
        let p = extract_patches(&img, 16, 8, 8).unwrap();
        assert_eq!(p.shape(), &[1, 225, 16 * 16 * 6]);
    }

    #[test]
    fn whole_image_patch_is_flattened_image() {
        let mut rng = Rng::new(1);
        let img = Tensor::<f64>::randn(&[2, 3, 4, 4], 1.0, &mut rng);
        let p = extract_patches(&img, 4, 2, 2).unwrap();
        assert_eq!(p.shape(), &[2, 1, 48]);
        assert_eq!(p.to_vec(), img.to_vec());
    }

    #[test]
    fn overlap_average_of_constant_is_constant() {
        let (m, k, s, c) = (12, 4, 2, 2);
        let img = Tensor::<f64>::full(&[1, c, m, m], 0.7);
        let p = extract_patches(&img, k, s, s).unwrap().to_vec();
        let g = (m - k) / s + 1;
        let mut sum = vec![0.0; c * m * m];
        let mut cnt = vec![0usize; c * m * m];
        for (pi, patch) in p.chunks(k * k * c).enumerate() {
            let (py, px) = (pi / g, pi % g);
            for ch in 0..c {
                for dy in 0..k {
                    for dx in 0..k {
                        let j = (ch * m + py * s + dy) * m + px * s + dx;
                        sum[j] += patch[(ch * k + dy) * k + dx];
                        cnt[j] += 1;
                    }
                }
            }
        }
        assert!(cnt.iter().all(|&n| n >= 1));
        assert!(sum.iter().zip(&cnt).all(|(s, &n)| (s / n as f64 - 0.7).abs() < 1e-15));
    }

    #[test]
    fn misaligned_stride_is_dimension_error() {
        let img = Tensor::<f32>::zeros(&[1, 6, 32, 32]);
        assert!(matches!(extract_patches(&img, 8, 5, 5), Err(Error::Dimension { .. })));
        let cfg = DiscriminatorConfig {
            stride_h: Some(5),
            ..DiscriminatorConfig::tiny()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn embedding_rows_and_zero_positional() {
        let cfg = DiscriminatorConfig::tiny();
        let d = Discriminator::<f64>::new(&cfg, &mut Rng::new(2)).unwrap();
        let mut rng = Rng::new(3);
        let patches = Tensor::<f64>::randn(&[2, cfg.num_patches(), cfg.patch_dim()], 1.0, &mut rng);
        let fe = d.embed(&patches, Some(&mut rng)).unwrap();
        assert_eq!(fe.shape(), &[2, cfg.num_patches() + 1, cfg.embed_dim]);
        // zero positional embedding and zero dropout: FE is [CT; PE]
        let pe = patches.matmul(&d.patch_embed.weight).unwrap();
        let fe0 = fe.narrow(0, 0, 1).unwrap();
        assert_eq!(fe0.narrow(1, 0, 1).unwrap().to_vec(), d.cls_token.to_vec());
        assert_eq!(
            fe0.narrow(1, 1, cfg.num_patches()).unwrap().to_vec(),
            pe.narrow(0, 0, 1).unwrap().to_vec()
        );
    }

    #[test]
    fn dropout_zeroes_and_rescales() {
        let x = Tensor::<f64>::ones(&[1000]);
        let y = dropout(&x, 0.25, &mut Rng::new(4)).unwrap().to_vec();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        assert!((150..350).contains(&zeros));
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
    }

    /// Plain-loop evaluation of one block on a single `[T, D]` sequence.
    fn block_oracle(b: &VitBlock<f64>, h: &[f64], t: usize, d: usize) -> Vec<f64> {
        let ln = |x: &[f64], n: &LayerNorm<f64>| -> Vec<f64> {
            let (g, be) = (n.gamma.to_vec(), n.beta.to_vec());
            let mut out = Vec::new();
            for row in x.chunks(d) {
                let m = row.iter().sum::<f64>() / d as f64;
                let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / d as f64;
                out.extend(
                    row.iter()
                        .enumerate()
                        .map(|(j, a)| (a - m) / (v + n.eps).sqrt() * g[j] + be[j]),
                );
            }
            out
        };
        let lin = |x: &[f64], l: &Linear<f64>| -> Vec<f64> {
            let w = l.weight.to_vec();
            let (din, dout) = (l.weight.shape()[0], l.weight.shape()[1]);
            let b = l.bias.as_ref().map(|b| b.to_vec()).unwrap_or(vec![0.0; dout]);
            let mut out = Vec::new();
            for row in x.chunks(din) {
                for o in 0..dout {
                    out.push(b[o] + (0..din).map(|i| row[i] * w[i * dout + o]).sum::<f64>());
                }
            }
            out
        };
        let l = ln(h, &b.norm1);
        let (q, k, v) = (lin(&l, &b.wq), lin(&l, &b.wk), lin(&l, &b.wv));
        let a = d / b.heads;
        let mut merged = vec![0.0; t * d];
        for hd in 0..b.heads {
            for i in 0..t {
                let s: Vec<f64> = (0..t)
                    .map(|j| {
                        (0..a)
                            .map(|c| q[i * d + hd * a + c] * k[j * d + hd * a + c])
                            .sum::<f64>()
                            / (a as f64).sqrt()
                    })
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = s.iter().map(|x| (x - mx).exp()).sum();
                for j in 0..t {
                    let p = (s[j] - mx).exp() / z;
                    for c in 0..a {
                        merged[i * d + hd * a + c] += p * v[j * d + hd * a + c];
                    }
                }
            }
        }
        let fr: Vec<f64> = lin(&merged, &b.wa).iter().zip(h).map(|(x, y)| x + y).collect();
        let hid: Vec<f64> = lin(&ln(&fr, &b.norm2), &b.mlp_in)
            .iter()
            .map(|&x| x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)))
            .collect();
        lin(&hid, &b.mlp_out).iter().zip(&fr).map(|(x, y)| x + y).collect()
    }

    #[test]
    fn block_matches_straight_line_oracle() {
        let mut rng = Rng::new(5);
        let b = VitBlock::<f64>::new(8, 2, 32, &mut rng);
        // non-trivial affine parameters and biases
        for p in b.params() {
            let n = p.numel();
            p.assign((0..n).map(|_| rng.normal() * 0.3).collect()).unwrap();
        }
        let h = Tensor::<f64>::randn(&[1, 5, 8], 1.0, &mut rng);
        let got = b.forward(&h).unwrap().to_vec();
        let want = block_oracle(&b, &h.to_vec(), 5, 8);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let mut rng = Rng::new(6);
        let b = VitBlock::<f64>::new(8, 2, 16, &mut rng);
        b.wq.weight.assign(vec![0.0; 64]).unwrap();
        b.wk.weight.assign(vec![0.0; 64]).unwrap();
        let h = Tensor::<f64>::randn(&[1, 5, 8], 1.0, &mut rng);
        let (attn, merged) = b.attend(&h).unwrap();
        assert!(attn.to_vec().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let v = b.wv.forward(&b.norm1.forward(&h).unwrap()).unwrap().to_vec();
        let mean: Vec<f64> = (0..8)
            .map(|c| (0..5).map(|t| v[t * 8 + c]).sum::<f64>() / 5.0)
            .collect();
        for row in merged.to_vec().chunks(8) {
            for (a, b) in row.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = Rng::new(7);
        let b = VitBlock::<f32>::new(16, 4, 32, &mut rng);
        let h = Tensor::<f32>::randn(&[2, 9, 16], 1.0, &mut rng);
        let (attn, _) = b.attend(&h).unwrap();
        for row in attn.to_vec().chunks(9) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_two_is_two_blocks_and_token_count_constant() {
        let cfg = DiscriminatorConfig::tiny();
        let d = Discriminator::<f64>::new(&cfg, &mut Rng::new(8)).unwrap();
        let fe = Tensor::<f64>::randn(&[1, cfg.num_patches() + 1, cfg.embed_dim], 1.0, &mut Rng::new(9));
        let h1 = d.blocks[0].forward(&fe).unwrap();
        assert_eq!(h1.shape(), fe.shape());
        let h2 = d.blocks[1].forward(&h1).unwrap();
        let want = d.norm.forward(&h2).unwrap();
        assert_eq!(d.encode(&fe).unwrap().to_vec(), want.to_vec());
    }

    #[test]
    fn swapping_patch_tokens_keeps_class_output() {
        let cfg = DiscriminatorConfig::tiny();
        let d = Discriminator::<f64>::new(&cfg, &mut Rng::new(10)).unwrap();
        let mut rng = Rng::new(11);
        let np = cfg.num_patches();
        let patches = Tensor::<f64>::randn(&[1, np, cfg.patch_dim()], 1.0, &mut rng);
        let de = cfg.embed_dim;
        let pv = patches.to_vec();
        let dd = cfg.patch_dim();
        let mut swapped = pv.clone();
        swapped[3 * dd..4 * dd].copy_from_slice(&pv[7 * dd..8 * dd]);
        swapped[7 * dd..8 * dd].copy_from_slice(&pv[3 * dd..4 * dd]);
        let swapped = Tensor::<f64>::new(swapped, patches.shape()).unwrap();
        let a = d.encode(&d.embed(&patches, None).unwrap()).unwrap();
        let b = d.encode(&d.embed(&swapped, None).unwrap()).unwrap();
        let (a0, b0) = (a.to_vec()[..de].to_vec(), b.to_vec()[..de].to_vec());
        for (x, y) in a0.iter().zip(&b0) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_in_open_unit_interval() {
        let cfg = DiscriminatorConfig::tiny();
        let d = Discriminator::<f32>::new(&cfg, &mut Rng::new(12)).unwrap();
        let mut rng = Rng::new(13);
        let img = Tensor::<f32>::rand_uniform(&[3, 3, 32, 32], 0.0, 1.0, &mut rng);
        let cond = Tensor::<f32>::rand_uniform(&[3, 3, 32, 32], 0.0, 1.0, &mut rng);
        let p = d.forward(&img, &cond).unwrap();
        assert_eq!(p.shape(), &[3, 1]);
        assert!(p.to_vec().iter().all(|&v| v > 0.0 && v < 1.0));
        d.head.weight.assign(vec![0.0; cfg.embed_dim]).unwrap();
        assert!(d.forward(&img, &cond).unwrap().to_vec().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_size_mismatch() {
        let d = Discriminator::<f32>::new(&DiscriminatorConfig::tiny(), &mut Rng::new(14)).unwrap();
        let a = Tensor::<f32>::zeros(&[1, 3, 32, 32]);
        assert!(d.forward(&a, &Tensor::zeros(&[1, 3, 16, 16])).is_err());
        assert!(d
            .forward(&Tensor::zeros(&[1, 3, 16, 16]), &Tensor::zeros(&[1, 3, 16, 16]))
            .is_err());
    }

    #[test]
    fn gradient_wrt_image_matches_finite_differences() {
        let cfg = DiscriminatorConfig {
            image_size: 16,
            patch_size: 8,
            stride_h: Some(4),
            stride_w: Some(4),
            embed_dim: 16,
            depth: 2,
            heads: 2,
            ..Default::default()
        };
        let d = Discriminator::<f64>::new(&cfg, &mut Rng::new(15)).unwrap();
        let mut rng = Rng::new(16);
        let img = Tensor::<f64>::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng).with_grad();
        let cond = Tensor::<f64>::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
        let rep = grad_check_leaves(
            || Ok(d.forward_logits(&img, &cond, None)?.sum()),
            std::slice::from_ref(&img),
            1e-3,
            Some((64, 1)),
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }
}

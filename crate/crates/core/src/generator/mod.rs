//! Transformer encoder-decoder producing a 2x super-resolved image.
//!
//! The network embeds the LR image with a 3x3 conv, runs `levels` encoder
//! stacks at doubling width and halving resolution, then decodes back up
//! through concatenation junctions that each end in a 1x1 channel
//! reduction. The last decoder runs at twice the input resolution and half
//! the base width, is followed by a refinement stack and a 3x3 conv to RGB,
//! and the result is added to the bicubic upscale of the input.

mod blocks;

use serde::{Deserialize, Serialize};

pub use blocks::{gdfn_hidden, ChannelReduce, Downsample, Gdfn, Mdta, TransformerBlock, TransformerStack, Upsample};

use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, Module, WeightInit};
use crate::tensor::ops::layout::dims4;
use crate::tensor::{no_grad, Element, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub levels: usize,
    /// Transformer blocks per encoder level; decoders reuse the count of the
    /// level they run at.
    pub stacks: Vec<usize>,
    pub base_channels: usize,
    pub heads: Vec<usize>,
    pub kernel_size: usize,
    pub refinement_stacks: usize,
    pub expansion: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            levels: 4,
            stacks: vec![4, 6, 6, 8],
            base_channels: 48,
            heads: vec![1, 2, 4, 8],
            kernel_size: 3,
            refinement_stacks: 4,
            expansion: 2.66,
        }
    }
}

impl GeneratorConfig {
    /// Small configuration used throughout the tests: `C = 8`, one block per
    /// level, one refinement block.
    pub fn tiny() -> Self {
        GeneratorConfig {
            stacks: vec![1, 1, 1, 1],
            base_channels: 8,
            heads: vec![1, 2, 4, 8],
            refinement_stacks: 1,
            ..Default::default()
        }
    }

    /// Channel width at encoder level `i` (1-based).
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// Spatial extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.stacks.len() != self.levels || self.heads.len() != self.levels {
            return bad(format!(
                "stacks ({}) and heads ({}) must both have one entry per level ({})",
                self.stacks.len(),
                self.heads.len(),
                self.levels
            ));
        }
        if self.stacks.contains(&0) {
            return bad("every level needs at least one transformer block".into());
        }
        let c = self.base_channels;
        if c == 0 || !c.is_multiple_of(2) {
            return bad(format!("base_channels must be even and positive, got {c}"));
        }
        if self.heads[0] == 0 || !(c / 2).is_multiple_of(self.heads[0]) {
            return bad(format!(
                "half width {} must be divisible by heads[0] = {}",
                c / 2,
                self.heads[0]
            ));
        }
        for i in 1..=self.levels {
            let h = self.heads[i - 1];
            if h == 0 || !self.width(i).is_multiple_of(h) {
                return bad(format!("level {i} width {} not divisible by {h} heads", self.width(i)));
            }
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(self.expansion > 0.0) || gdfn_hidden(c / 2, self.expansion) == 0 {
            return bad(format!("expansion {} too small", self.expansion));
        }
        Ok(())
    }

    /// Expected stage shapes for an `[n, 3, h, w]` input, in forward order:
    /// `F0 .. F{2l+1}` then `SR`.
    pub fn stage_shapes(&self, n: usize, h: usize, w: usize) -> Vec<(String, Vec<usize>)> {
        let l = self.levels;
        let mut out = vec![("F0".to_string(), vec![n, self.base_channels, h, w])];
        for i in 1..=l {
            let s = 1 << (i - 1);
            out.push((format!("F{i}"), vec![n, self.width(i), h / s, w / s]));
        }
        for i in (2..=l).rev() {
            let s = 1 << (i - 2);
            out.push((format!("F{}", 2 * l + 1 - i), vec![n, self.width(i - 1), h / s, w / s]));
        }
        let half = self.base_channels / 2;
        out.push((format!("F{}", 2 * l), vec![n, half, 2 * h, 2 * w]));
        out.push((format!("F{}", 2 * l + 1), vec![n, half, 2 * h, 2 * w]));
        out.push(("SR".to_string(), vec![n, 3, 2 * h, 2 * w]));
        out
    }
}

/// One decoder level. `up_prev`/`skip_*` are absent where the dataflow has
/// no such branch.
#[derive(Debug, Clone)]
pub struct DecoderLevel<T: Element = f32> {
    /// Upsamples the previous decoder output (absent for the deepest level).
    pub up_prev: Option<Upsample<T>>,
    /// Upsamples the encoder output of this level.
    pub up_skip: Upsample<T>,
    /// Reduces `up_skip(F_i) ++ F_{i-1}` (middle levels only).
    pub skip_reduce: Option<ChannelReduce<T>>,
    pub reduce: ChannelReduce<T>,
    pub stack: TransformerStack<T>,
}

impl<T: Element> Module<T> for DecoderLevel<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        if let Some(u) = &self.up_prev {
            u.visit_params(&join(prefix, "up_prev"), f);
        }
        self.up_skip.visit_params(&join(prefix, "up_skip"), f);
        if let Some(r) = &self.skip_reduce {
            r.visit_params(&join(prefix, "skip_reduce"), f);
        }
        self.reduce.visit_params(&join(prefix, "reduce"), f);
        self.stack.visit_params(&join(prefix, "stack"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Generator<T: Element = f32> {
    cfg: GeneratorConfig,
    pub embed: Conv2d<T>,
    pub encoders: Vec<TransformerStack<T>>,
    pub downs: Vec<Downsample<T>>,
    /// Indexed by level: `decoders[0]` is the full-resolution level 1.
    pub decoders: Vec<DecoderLevel<T>>,
    pub refine: TransformerStack<T>,
    pub out: Conv2d<T>,
}

impl<T: Element> Generator<T> {
    pub fn new(cfg: &GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (l, k, e) = (cfg.levels, cfg.kernel_size, cfg.expansion);
        let c = cfg.base_channels;
        let kaiming = WeightInit::KaimingUniform;
        let embed = Conv2d::new(3, c, k, true, kaiming, rng);
        let mut encoders = Vec::with_capacity(l);
        let mut downs = Vec::with_capacity(l - 1);
        for i in 1..=l {
            if i > 1 {
                downs.push(Downsample::new(cfg.width(i - 1), k, rng)?);
            }
            encoders.push(TransformerStack::new(
                cfg.stacks[i - 1],
                cfg.width(i),
                cfg.heads[i - 1],
                e,
                k,
                rng,
            )?);
        }
        let mut decoders = Vec::with_capacity(l);
        for i in 1..=l {
            let dec = if i == 1 {
                DecoderLevel {
                    up_prev: Some(Upsample::new(c, k, rng)?),
                    up_skip: Upsample::new(c, k, rng)?,
                    skip_reduce: None,
                    reduce: ChannelReduce::new(c, rng)?,
                    stack: TransformerStack::new(cfg.stacks[0], c / 2, cfg.heads[0], e, k, rng)?,
                }
            } else {
                let below = cfg.width(i - 1);
                DecoderLevel {
                    up_prev: (i < l).then(|| Upsample::new(cfg.width(i), k, rng)).transpose()?,
                    up_skip: Upsample::new(cfg.width(i), k, rng)?,
                    skip_reduce: (i < l).then(|| ChannelReduce::new(2 * below, rng)).transpose()?,
                    reduce: ChannelReduce::new(2 * below, rng)?,
                    stack: TransformerStack::new(cfg.stacks[i - 2], below, cfg.heads[i - 2], e, k, rng)?,
                }
            };
            decoders.push(dec);
        }
        let refine = TransformerStack::new(cfg.refinement_stacks, c / 2, cfg.heads[0], e, k, rng)?;
        let out = Conv2d::new(c / 2, 3, k, true, kaiming, rng);
        Ok(Generator {
            cfg: cfg.clone(),
            embed,
            encoders,
            downs,
            decoders,
            refine,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn check_input(&self, lr: &Tensor<T>) -> Result<[usize; 4]> {
        let [n, c, h, w] = dims4(lr, "generator")?;
        if c != 3 {
            return Err(Error::dim("generator", format!("expected 3 input channels, got {c}")));
        }
        let m = self.cfg.size_multiple();
        for (name, v) in [("height", h), ("width", w)] {
            if v == 0 || v % m != 0 {
                return Err(Error::Precondition(format!(
                    "input {name} {v} is not a positive multiple of {m}"
                )));
            }
        }
        Ok([n, c, h, w])
    }

    /// 2x forward pass, `[N, 3, H, W] -> [N, 3, 2H, 2W]`, without clamping.
    pub fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_impl(lr, None, true)
    }

    /// The learned branch alone: `forward(lr) - bicubic_2x(lr)`, computed
    /// before the skip is added.
    pub fn residual(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_impl(lr, None, false)
    }

    /// As [`forward`](Self::forward), also returning every stage shape.
    pub fn forward_traced(&self, lr: &Tensor<T>) -> Result<(Tensor<T>, Vec<(String, Vec<usize>)>)> {
        let mut trace = Vec::new();
        let sr = self.forward_impl(lr, Some(&mut trace), true)?;
        Ok((sr, trace))
    }

    fn forward_impl(
        &self,
        lr: &Tensor<T>,
        mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
        with_skip: bool,
    ) -> Result<Tensor<T>> {
        let [n, _, h, w] = self.check_input(lr)?;
        let l = self.cfg.levels;
        let mut record = |name: String, t: &Tensor<T>| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((name, t.shape().to_vec()));
            }
        };

        let f0 = self.embed.forward(lr)?;
        record("F0".into(), &f0);
        // feats[i - 1] = F_i
        let mut feats: Vec<Tensor<T>> = Vec::with_capacity(l);
        for i in 1..=l {
            let input = if i == 1 {
                f0.clone()
            } else {
                self.downs[i - 2].forward(&feats[i - 2])?
            };
            let f = self.encoders[i - 1].forward(&input)?;
            record(format!("F{i}"), &f);
            feats.push(f);
        }

        let mut prev = feats[l - 1].clone();
        for i in (2..=l).rev() {
            let dec = &self.decoders[i - 1];
            let up_skip = dec.up_skip.forward(&feats[i - 1])?;
            let joined = match (&dec.up_prev, &dec.skip_reduce) {
                (Some(up_prev), Some(skip_reduce)) => {
                    let skip = skip_reduce.forward(&Tensor::concat_channels(&[up_skip, feats[i - 2].clone()])?)?;
                    Tensor::concat_channels(&[up_prev.forward(&prev)?, skip])?
                }
                _ => Tensor::concat_channels(&[up_skip, feats[i - 2].clone()])?,
            };
            prev = dec.stack.forward(&dec.reduce.forward(&joined)?)?;
            record(format!("F{}", 2 * l + 1 - i), &prev);
        }

        let d1 = &self.decoders[0];
        let up_prev = d1.up_prev.as_ref().expect("level-1 decoder upsamples its input");
        let joined = Tensor::concat_channels(&[d1.up_skip.forward(&feats[0])?, up_prev.forward(&prev)?])?;
        let f_last = d1.stack.forward(&d1.reduce.forward(&joined)?)?;
        record(format!("F{}", 2 * l), &f_last);
        let refined = self.refine.forward(&f_last)?;
        record(format!("F{}", 2 * l + 1), &refined);

        let residual = self.out.forward(&refined)?;
        if !with_skip {
            return Ok(residual);
        }
        let skip = lr.resize_bicubic(2 * h, 2 * w)?;
        let sr = residual.add(&skip)?;
        record("SR".into(), &sr);

        if cfg!(debug_assertions) {
            if let Some(tr) = trace.as_deref() {
                debug_assert_eq!(tr, &self.cfg.stage_shapes(n, h, w)[..], "stage shape ledger");
            }
        }
        Ok(sr)
    }

    /// Applies the 2x network twice with the same parameters.
    pub fn generate_4x(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(&self.forward(lr)?)
    }

    /// `forward` for scale 2, [`generate_4x`](Self::generate_4x) for scale 4.
    pub fn upscale(&self, lr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
        match scale {
            2 => self.forward(lr),
            4 => self.generate_4x(lr),
            s => Err(Error::Usage(format!("scale must be 2 or 4, got {s}"))),
        }
    }

    /// Inference on inputs of any size: replicate-pads the bottom/right edges
    /// up to the size multiple, upscales without gradient tracking, crops
    /// back to `scale` times the input and clamps to `[0, 1]`.
    pub fn infer(&self, lr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
        let [_, _, h, w] = dims4(lr, "generator")?;
        let m = self.cfg.size_multiple();
        let (ph, pw) = (h.div_ceil(m) * m - h, w.div_ceil(m) * m - w);
        no_grad(|| {
            let x = if ph + pw > 0 {
                lr.pad_replicate(ph, pw)?
            } else {
                lr.clone()
            };
            let sr = self.upscale(&x, scale)?;
            let sr = if ph + pw > 0 {
                sr.narrow(2, 0, scale * h)?.narrow(3, 0, scale * w)?
            } else {
                sr
            };
            Ok(sr.clamp(0.0, 1.0))
        })
    }
}

impl<T: Element> Module<T> for Generator<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.embed.visit_params(&join(prefix, "embed"), f);
        for (i, e) in self.encoders.iter().enumerate() {
            e.visit_params(&join(prefix, &format!("enc{}", i + 1)), f);
        }
        for (i, d) in self.downs.iter().enumerate() {
            d.visit_params(&join(prefix, &format!("down{}", i + 1)), f);
        }
        for (i, d) in self.decoders.iter().enumerate() {
            d.visit_params(&join(prefix, &format!("dec{}", i + 1)), f);
        }
        self.refine.visit_params(&join(prefix, "refine"), f);
        self.out.visit_params(&join(prefix, "out"), f);
    }
}

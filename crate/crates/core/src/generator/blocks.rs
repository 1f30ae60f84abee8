use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, DepthwiseConv2d, LayerNorm, Module, WeightInit, PROJ_STD};
use crate::tensor::ops::layout::dims4;
use crate::tensor::{Element, Rng, Tensor};

const PROJ: WeightInit = WeightInit::Normal(PROJ_STD);

/// Multi-Dconv head transposed attention: attention across channels, with
/// queries, keys and values built by a 1x1 then a depthwise convolution.
#[derive(Debug, Clone)]
pub struct Mdta<T: Element = f32> {
    pub norm: LayerNorm<T>,
    pub qkv: Conv2d<T>,
    pub qkv_dw: DepthwiseConv2d<T>,
    pub proj: Conv2d<T>,
    /// Per-head logit scale, starts at 1.
    pub temperature: Tensor<T>,
    pub heads: usize,
}

impl<T: Element> Mdta<T> {
    pub fn new(channels: usize, heads: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::dim(
                "mdta",
                format!("{channels} channels not divisible by {heads} heads"),
            ));
        }
        Ok(Mdta {
            norm: LayerNorm::new(channels),
            qkv: Conv2d::new(channels, 3 * channels, 1, true, PROJ, rng),
            qkv_dw: DepthwiseConv2d::new(3 * channels, kernel, rng),
            proj: Conv2d::new(channels, channels, 1, true, PROJ, rng),
            temperature: Tensor::ones(&[heads]).with_grad(),
            heads,
        })
    }

    /// Returns the `[N, heads, C/heads, C/heads]` attention weights and the
    /// pre-projection attention output.
    pub fn attend(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let [n, c, h, w] = dims4(x, "mdta")?;
        if c != self.norm.gamma.numel() {
            return Err(Error::dim(
                "mdta",
                format!("block built for {} channels, got {c}", self.norm.gamma.numel()),
            ));
        }
        let ch = c / self.heads;
        let y = self.norm.forward_channels(x)?;
        let qkv = self.qkv_dw.forward(&self.qkv.forward(&y)?)?;
        let parts = qkv.chunk(3, 1)?;
        let split = |t: &Tensor<T>| t.reshape(&[n, self.heads, ch, h * w]);
        let q = split(&parts[0])?.l2_normalize_lastdim(1e-12)?;
        let k = split(&parts[1])?.l2_normalize_lastdim(1e-12)?;
        let v = split(&parts[2])?;
        let tau = self
            .temperature
            .reshape(&[self.heads, 1, 1])?
            .broadcast_to(&[n, self.heads, ch, ch])?;
        let attn = q.matmul(&k.transpose_last2()?)?.mul(&tau)?.softmax_lastdim()?;
        let out = attn.matmul(&v)?.reshape(&[n, c, h, w])?;
        Ok((attn, out))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, out) = self.attend(x)?;
        x.add(&self.proj.forward(&out)?)
    }
}

impl<T: Element> Module<T> for Mdta<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.qkv.visit_params(&join(prefix, "qkv"), f);
        self.qkv_dw.visit_params(&join(prefix, "qkv_dw"), f);
        self.proj.visit_params(&join(prefix, "proj"), f);
        f(join(prefix, "temperature"), &self.temperature);
    }
}

/// Hidden width of the gated feed-forward, `floor(channels * expansion)`.
pub fn gdfn_hidden(channels: usize, expansion: f64) -> usize {
    (channels as f64 * expansion).floor() as usize
}

/// Gated depthwise feed-forward: `x + W_out(gelu(a) * b)` where `a` and `b`
/// are the two halves of a 1x1-then-depthwise projection of `LN(x)`.
#[derive(Debug, Clone)]
pub struct Gdfn<T: Element = f32> {
    pub norm: LayerNorm<T>,
    pub project_in: Conv2d<T>,
    pub dw: DepthwiseConv2d<T>,
    pub project_out: Conv2d<T>,
}

impl<T: Element> Gdfn<T> {
    pub fn new(channels: usize, expansion: f64, kernel: usize, rng: &mut Rng) -> Result<Self> {
        let hidden = gdfn_hidden(channels, expansion);
        if hidden == 0 {
            return Err(Error::Config(format!(
                "expansion {expansion} gives an empty hidden layer at {channels} channels"
            )));
        }
        Ok(Gdfn {
            norm: LayerNorm::new(channels),
            project_in: Conv2d::new(channels, 2 * hidden, 1, true, PROJ, rng),
            dw: DepthwiseConv2d::new(2 * hidden, kernel, rng),
            project_out: Conv2d::new(hidden, channels, 1, true, PROJ, rng),
        })
    }

    pub fn hidden(&self) -> usize {
        self.project_out.in_channels()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .dw
            .forward(&self.project_in.forward(&self.norm.forward_channels(x)?)?)?;
        let halves = y.chunk(2, 1)?;
        let gated = halves[0].gelu().mul(&halves[1])?;
        x.add(&self.project_out.forward(&gated)?)
    }
}

impl<T: Element> Module<T> for Gdfn<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.project_in.visit_params(&join(prefix, "project_in"), f);
        self.dw.visit_params(&join(prefix, "dw"), f);
        self.project_out.visit_params(&join(prefix, "project_out"), f);
    }
}

#[derive(Debug, Clone)]
pub struct TransformerBlock<T: Element = f32> {
    pub attn: Mdta<T>,
    pub ffn: Gdfn<T>,
}

impl<T: Element> TransformerBlock<T> {
    pub fn new(channels: usize, heads: usize, expansion: f64, kernel: usize, rng: &mut Rng) -> Result<Self> {
        Ok(TransformerBlock {
            attn: Mdta::new(channels, heads, kernel, rng)?,
            ffn: Gdfn::new(channels, expansion, kernel, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.ffn.forward(&self.attn.forward(x)?)
    }
}

impl<T: Element> Module<T> for TransformerBlock<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.attn.visit_params(&join(prefix, "attn"), f);
        self.ffn.visit_params(&join(prefix, "ffn"), f);
    }
}

/// `count` transformer blocks applied in sequence.
#[derive(Debug, Clone)]
pub struct TransformerStack<T: Element = f32> {
    pub blocks: Vec<TransformerBlock<T>>,
}

impl<T: Element> TransformerStack<T> {
    pub fn new(
        count: usize,
        channels: usize,
        heads: usize,
        expansion: f64,
        kernel: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let blocks = (0..count)
            .map(|_| TransformerBlock::new(channels, heads, expansion, kernel, rng))
            .collect::<Result<_>>()?;
        Ok(TransformerStack { blocks })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.blocks.iter().try_fold(x.clone(), |h, b| b.forward(&h))
    }
}

impl<T: Element> Module<T> for TransformerStack<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &i.to_string()), f);
        }
    }
}

/// `[N, C, H, W] -> [N, 2C, H/2, W/2]`: conv to `C/2` then pixel unshuffle.
#[derive(Debug, Clone)]
pub struct Downsample<T: Element = f32> {
    pub conv: Conv2d<T>,
}

impl<T: Element> Downsample<T> {
    pub fn new(channels: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(Error::dim("downsample", format!("odd channel count {channels}")));
        }
        Ok(Downsample {
            conv: Conv2d::new(channels, channels / 2, kernel, true, WeightInit::KaimingUniform, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, w] = dims4(x, "downsample")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("downsample", format!("odd spatial extent {h}x{w}")));
        }
        self.conv.forward(x)?.pixel_unshuffle(2)
    }
}

impl<T: Element> Module<T> for Downsample<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
    }
}

/// `[N, C, H, W] -> [N, C/2, 2H, 2W]`: conv to `2C` then pixel shuffle.
#[derive(Debug, Clone)]
pub struct Upsample<T: Element = f32> {
    pub conv: Conv2d<T>,
}

impl<T: Element> Upsample<T> {
    pub fn new(channels: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(Error::dim("upsample", format!("odd channel count {channels}")));
        }
        Ok(Upsample {
            conv: Conv2d::new(channels, 2 * channels, kernel, true, WeightInit::KaimingUniform, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.conv.forward(x)?.pixel_shuffle(2)
    }
}

impl<T: Element> Module<T> for Upsample<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
    }
}

/// 1x1 convolution halving the channel count after a skip concatenation.
#[derive(Debug, Clone)]
pub struct ChannelReduce<T: Element = f32> {
    pub conv: Conv2d<T>,
}

impl<T: Element> ChannelReduce<T> {
    /// `channels` is the (even) input width.
    pub fn new(channels: usize, rng: &mut Rng) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(Error::dim("reduce_channels", format!("odd channel count {channels}")));
        }
        Ok(ChannelReduce {
            conv: Conv2d::new(channels, channels / 2, 1, true, WeightInit::KaimingUniform, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, _, _] = dims4(x, "reduce_channels")?;
        if c % 2 != 0 {
            return Err(Error::dim("reduce_channels", format!("odd channel count {c}")));
        }
        self.conv.forward(x)
    }
}

impl<T: Element> Module<T> for ChannelReduce<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
    }
}

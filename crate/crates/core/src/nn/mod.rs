//! Parameterised layers shared by the generator and discriminator.

use std::collections::BTreeMap;

use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Element, Rng, Tensor};

/// Standard deviation for projection weights drawn from a normal.
pub const PROJ_STD: f64 = 0.02;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that owns learnable leaves under stable dotted names.
pub trait Module<T: Element> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    fn zero_grad(&self) {
        self.params().iter().for_each(|p| p.zero_grad());
    }

    fn set_requires_grad(&self, on: bool) {
        self.params().iter().for_each(|p| p.set_requires_grad(on));
    }

    /// Overwrites every parameter with zeros.
    fn zero_weights(&self) {
        for p in self.params() {
            p.assign(vec![T::zero(); p.numel()]).expect("leaf parameter");
        }
    }

    /// Copies values from `src` by name. Every parameter must be present with
    /// a matching shape; nothing is written unless all of them are.
    fn load_named(&self, src: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        let own = self.named_params();
        for (name, p) in &own {
            let t = src
                .get(name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            if t.shape() != p.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: p.shape().to_vec(),
                    found: t.shape().to_vec(),
                }
                .into());
            }
        }
        for (name, p) in &own {
            p.assign(src[name].to_vec())?;
        }
        Ok(())
    }

    /// Copies all parameter values from another instance of the same shape.
    fn copy_from(&self, other: &Self) -> Result<()>
    where
        Self: Sized,
    {
        let map = other.named_params().into_iter().collect();
        self.load_named(&map)
    }
}

fn kaiming_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng).with_grad()
}

/// How a layer's weight is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// Uniform in `±1/sqrt(fan_in)` (Kaiming-uniform with negative slope sqrt(5)).
    KaimingUniform,
    /// Normal with the given standard deviation.
    Normal(f64),
}

impl WeightInit {
    fn make<T: Element>(self, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
        match self {
            WeightInit::KaimingUniform => kaiming_uniform(shape, fan_in, rng),
            WeightInit::Normal(std) => Tensor::randn(shape, std, rng).with_grad(),
        }
    }
}

fn zero_param<T: Element>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).with_grad()
}

/// Dense 2-D convolution, `weight: [cout, cin, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Element> Conv2d<T> {
    /// Shape-preserving (stride 1, `pad = k / 2`) convolution.
    pub fn new(cin: usize, cout: usize, k: usize, bias: bool, init: WeightInit, rng: &mut Rng) -> Self {
        Conv2d {
            weight: init.make(&[cout, cin, k, k], cin * k * k, rng),
            bias: bias.then(|| zero_param(&[cout])),
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.stride, self.pad)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

/// Per-channel `k x k` convolution, `weight: [c, 1, k, k]`, shape preserving.
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d<T: Element = f32> {
    pub weight: Tensor<T>,
}

impl<T: Element> DepthwiseConv2d<T> {
    pub fn new(channels: usize, k: usize, rng: &mut Rng) -> Self {
        DepthwiseConv2d {
            weight: kaiming_uniform(&[channels, 1, k, k], k * k, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let k = self.weight.shape()[2];
        x.depthwise_conv2d(&self.weight, k / 2)
    }
}

impl<T: Element> Module<T> for DepthwiseConv2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
    }
}

/// `y = x W + b` over the last axis, `weight: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> Linear<T> {
    pub fn new(din: usize, dout: usize, bias: bool, rng: &mut Rng) -> Self {
        Linear {
            weight: WeightInit::Normal(PROJ_STD).make(&[din, dout], din, rng),
            bias: bias.then(|| zero_param(&[dout])),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(&b.broadcast_to(y.shape())?),
            None => Ok(y),
        }
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

/// Layer normalization with learnable affine, `gamma = 1`, `beta = 0`.
#[derive(Debug, Clone)]
pub struct LayerNorm<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::ones(&[dim]).with_grad(),
            beta: zero_param(&[dim]),
            eps: 1e-5,
        }
    }

    /// Normalizes over the last axis.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }

    /// Normalizes `[N, C, H, W]` over `C` at every pixel.
    pub fn forward_channels(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(Error::dim("layer_norm", format!("expected NCHW, got {:?}", x.shape())));
        }
        self.forward(&x.permute(&[0, 2, 3, 1])?)?.permute(&[0, 3, 1, 2])
    }
}

impl<T: Element> Module<T> for LayerNorm<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }
}

/// Redraws every parameter of `m` at a generic point for gradient checks:
/// weights `N(0, 1/fan_in)`, scales (`gamma`, `temperature`) `1 + N(0, 0.01)`,
/// everything else `N(0, 0.01)`.
///
/// At the small training init, deep-level gradients of a full network sit
/// below the forward pass's roundoff and no finite-difference step resolves
/// them; correctness of a backward pass does not depend on where it is
/// evaluated.
pub fn redraw_generic<T: Element>(m: &dyn Module<T>, rng: &mut Rng) {
    for (name, p) in m.named_params() {
        let shape = p.shape().to_vec();
        let n: usize = shape.iter().product();
        let kind = name.rsplit('.').next().unwrap_or("");
        let v: Vec<T> = (0..n)
            .map(|_| {
                T::of(match kind {
                    "weight" => rng.normal() / ((n / shape[0]) as f64).sqrt(),
                    "gamma" | "temperature" => 1.0 + 0.1 * rng.normal(),
                    _ => 0.1 * rng.normal(),
                })
            })
            .collect();
        p.assign(v).expect("length matches shape");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_applies_weight_then_bias() {
        let mut rng = Rng::new(1);
        let lin = Linear::<f64>::new(2, 3, true, &mut rng);
        lin.weight.assign(vec![1.0, 0.0, 2.0, 0.0, 1.0, -1.0]).unwrap();
        lin.bias.as_ref().unwrap().assign(vec![0.5, 0.5, 0.5]).unwrap();
        let x = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let y = lin.forward(&x).unwrap().to_vec();
        assert_eq!(y, vec![1.5, 2.5, 0.5, 3.5, 4.5, 2.5]);
    }

    #[test]
    fn channel_layer_norm_matches_lastdim_after_permute() {
        let mut rng = Rng::new(2);
        let ln = LayerNorm::<f64>::new(3);
        let x = Tensor::<f64>::randn(&[2, 3, 2, 2], 1.0, &mut rng);
        let y = ln.forward_channels(&x).unwrap();
        // every pixel's channel vector is standardized
        let v = y.to_vec();
        for n in 0..2 {
            for p in 0..4 {
                let m: f64 = (0..3).map(|c| v[n * 12 + c * 4 + p]).sum::<f64>() / 3.0;
                assert!(m.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn load_named_reports_missing_and_shape() {
        let mut rng = Rng::new(3);
        let a = Conv2d::<f32>::new(2, 4, 3, true, WeightInit::KaimingUniform, &mut rng);
        let mut map: BTreeMap<_, _> = a.named_params().into_iter().collect();
        map.remove("bias");
        let err = a.load_named(&map).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::MissingTensor(ref n)) if n == "bias"));
        map.insert("bias".into(), Tensor::zeros(&[3]));
        let err = a.load_named(&map).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::ShapeMismatch { .. })));
    }

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = Rng::new(4);
        let c = Conv2d::<f64>::new(3, 8, 3, false, WeightInit::KaimingUniform, &mut rng);
        let bound = 1.0 / 27f64.sqrt();
        assert!(c.weight.to_vec().iter().all(|w| w.abs() <= bound));
        assert!(c.weight.requires_grad());
    }
}

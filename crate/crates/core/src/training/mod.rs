//! Losses, Adam, the alternating train step and the resumable loop.

mod adam;
mod loss;
mod run;

pub use adam::{adam_update, Adam, AdamConfig, OptimizerState};
pub use loss::{adversarial_loss_d, generator_loss, reconstruction_loss, GeneratorLoss};
pub use run::{checkpoint_path, train_loop, TrainSummary, FINAL_CHECKPOINT, LOG_FILE, LOG_HEADER};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{bicubic_resize, Checkpoint, CheckpointMeta, ImagePair};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::nn::Module;
use crate::tensor::{no_grad, Rng, Tensor};

pub(crate) const STREAM_INIT_GEN: u64 = 1;
pub(crate) const STREAM_INIT_DISC: u64 = 2;
pub(crate) const STREAM_SHUFFLE: u64 = 1 << 40;
pub(crate) const STREAM_STEP: u64 = 1 << 41;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_adv: f64,
    pub lambda_rec: f64,
    pub batch_size: usize,
    /// Total generator steps.
    pub steps: u64,
    /// Discriminator updates per generator update; 0 freezes D.
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Side of the square LR training crop; 0 trains on whole images.
    pub lr_crop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda_adv: 0.001,
            lambda_rec: 1.0,
            batch_size: 4,
            steps: 1000,
            d_steps_per_g_step: 1,
            seed: 0,
            log_every: 10,
            checkpoint_every: 100,
            lr_crop: 64,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.lambda_adv < 0.0 || self.lambda_rec < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return bad("log_every and checkpoint_every must be at least 1");
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_rec: f64,
    pub g_total: f64,
    /// Mean D probability on real images.
    pub d_real: f64,
    /// Mean D probability on generated images.
    pub d_fake: f64,
    /// Wall time of the step; kept out of the TSV so logs are reproducible.
    pub wall_ms: f64,
}

impl TrainLogRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.d_loss,
            self.g_adv,
            self.g_rec,
            self.g_total,
            self.d_real,
            self.d_fake,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step, self.d_loss, self.g_adv, self.g_rec, self.g_total, self.d_real, self.d_fake
        )
    }
}

/// Stacks pairs into `[N, 3, h, w]` LR and `[N, 3, sh, sw]` HR batches.
pub fn stack_batch(batch: &[ImagePair]) -> Result<(Tensor, Tensor, usize)> {
    let Some(first) = batch.first() else {
        return Err(Error::Precondition("empty batch".into()));
    };
    let scale = first.scale;
    if batch.iter().any(|p| p.scale != scale) {
        return Err(Error::Precondition("batch mixes scale factors".into()));
    }
    let add_batch = |t: &Tensor| {
        let mut s = vec![1];
        s.extend_from_slice(t.shape());
        t.reshape(&s)
    };
    let lr: Vec<Tensor> = batch.iter().map(|p| add_batch(&p.lr)).collect::<Result<_>>()?;
    let hr: Vec<Tensor> = batch.iter().map(|p| add_batch(&p.hr)).collect::<Result<_>>()?;
    Ok((Tensor::concat(&lr, 0)?, Tensor::concat(&hr, 0)?, scale))
}

fn mean_prob(logits: &Tensor) -> f64 {
    let v = logits.to_f64_vec();
    v.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).sum::<f64>() / v.len() as f64
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.item()? as f64)
}

/// Generator, discriminator and their optimizers.
pub struct Trainer {
    pub gen: Generator,
    pub disc: Discriminator,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    pub cfg: TrainConfig,
    /// Completed generator steps.
    pub step: u64,
}

impl Trainer {
    pub fn new(gcfg: &GeneratorConfig, dcfg: &DiscriminatorConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let root = Rng::new(cfg.seed);
        let gen = Generator::new(gcfg, &mut root.fork(STREAM_INIT_GEN))?;
        let disc = Discriminator::new(dcfg, &mut root.fork(STREAM_INIT_DISC))?;
        let gen_opt = Adam::new(&gen, cfg.adam());
        let disc_opt = Adam::new(&disc, cfg.adam());
        Ok(Trainer {
            gen,
            disc,
            gen_opt,
            disc_opt,
            cfg: cfg.clone(),
            step: 0,
        })
    }

    /// Per-step generator derived from the seed, so resumed runs replay
    /// the same randomness.
    pub fn step_rng(&self, step: u64) -> Rng {
        Rng::new(self.cfg.seed).fork(STREAM_STEP + step)
    }

    /// One D update (or `d_steps_per_g_step` of them) followed by one G
    /// update with D frozen.
    pub fn train_step(&mut self, batch: &[ImagePair], rng: &mut Rng) -> Result<TrainLogRecord> {
        let start = Instant::now();
        let step = self.step + 1;
        let (lr, hr, scale) = stack_batch(batch)?;
        let (hh, hw) = (hr.shape()[2], hr.shape()[3]);
        let cond = bicubic_resize(&lr, hh, hw)?;

        let mut d_stats = None;
        for _ in 0..self.cfg.d_steps_per_g_step {
            let sr = no_grad(|| self.gen.upscale(&lr, scale))?.detach();
            self.disc.zero_grad();
            let real = self.disc.forward_logits(&hr, &cond, Some(rng))?;
            let fake = self.disc.forward_logits(&sr, &cond, Some(rng))?;
            let d_loss = adversarial_loss_d(&real, &fake)?;
            let v = scalar(&d_loss)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("discriminator loss {v}"),
                });
            }
            d_loss.backward()?;
            self.disc_opt.step()?;
            d_stats = Some((v, mean_prob(&real), mean_prob(&fake)));
        }

        self.gen.zero_grad();
        self.disc.zero_grad();
        self.disc.set_requires_grad(false);
        let g = self.generator_backward(&lr, &hr, &cond, scale, rng, step);
        self.disc.set_requires_grad(true);
        let ((g_adv, g_rec, g_total), fake_logit) = g?;
        self.gen_opt.step()?;

        let (d_loss, d_real, d_fake) = match d_stats {
            Some(s) => s,
            None => no_grad(|| -> Result<_> {
                let real = self.disc.forward_logits(&hr, &cond, None)?;
                let v = scalar(&adversarial_loss_d(&real, &fake_logit)?)?;
                Ok((v, mean_prob(&real), mean_prob(&fake_logit)))
            })?,
        };
        let rec = TrainLogRecord {
            step,
            d_loss,
            g_adv,
            g_rec,
            g_total,
            d_real,
            d_fake,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if !rec.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: rec.tsv_row(),
            });
        }
        self.step = step;
        Ok(rec)
    }

    /// Generator loss and its backward pass; D must already be frozen so
    /// no gradient reaches its parameters.
    fn generator_backward(
        &self,
        lr: &Tensor,
        hr: &Tensor,
        cond: &Tensor,
        scale: usize,
        rng: &mut Rng,
        step: u64,
    ) -> Result<((f64, f64, f64), Tensor)> {
        let (g, fake) = self.generator_pass(lr, hr, cond, scale, rng)?;
        let vals = (scalar(&g.adversarial)?, scalar(&g.reconstruction)?, scalar(&g.total)?);
        if ![vals.0, vals.1, vals.2].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: format!("generator loss adv {} rec {} total {}", vals.0, vals.1, vals.2),
            });
        }
        g.total.backward()?;
        Ok((vals, fake))
    }

    fn generator_pass(
        &self,
        lr: &Tensor,
        hr: &Tensor,
        cond: &Tensor,
        scale: usize,
        rng: &mut Rng,
    ) -> Result<(GeneratorLoss, Tensor)> {
        let sr = self.gen.upscale(lr, scale)?;
        if self.cfg.lambda_adv == 0.0 {
            // D does not contribute; evaluate it without a graph for logging.
            let fake = no_grad(|| self.disc.forward_logits(&sr.detach(), cond, Some(rng)))?;
            let g = generator_loss(&fake, hr, &sr, 0.0, self.cfg.lambda_rec)?;
            return Ok((g, fake));
        }
        let fake = self.disc.forward_logits(&sr, cond, Some(rng))?;
        let g = generator_loss(&fake, hr, &sr, self.cfg.lambda_adv, self.cfg.lambda_rec)?;
        let fake = fake.detach();
        Ok((g, fake))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            generator: self.gen.config().clone(),
            discriminator: self.disc.config().clone(),
            step: self.step,
            rng: self.step_rng(self.step).state(),
            gen_opt_steps: self.gen_opt.state().step,
            disc_opt_steps: self.disc_opt.state().step,
            train: Some(self.cfg.clone()),
        };
        let mut ck = Checkpoint::new(meta);
        ck.push_module("gen", &self.gen);
        ck.push_module("disc", &self.disc);
        for (tag, opt) in [("gen", &self.gen_opt), ("disc", &self.disc_opt)] {
            let s = opt.state();
            for (i, name) in s.names.iter().enumerate() {
                let shape = &s.shapes[i];
                ck.push(
                    format!("opt.{tag}.m.{name}"),
                    &Tensor::new(s.m[i].clone(), shape).expect("moment shape"),
                );
                ck.push(
                    format!("opt.{tag}.v.{name}"),
                    &Tensor::new(s.v[i].clone(), shape).expect("moment shape"),
                );
            }
        }
        ck
    }

    /// Rebuilds a trainer from a training checkpoint. `cfg` overrides the
    /// stored training config when given.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: Option<&TrainConfig>) -> Result<Self> {
        let cfg = match (cfg, &ck.meta.train) {
            (Some(c), _) => c.clone(),
            (None, Some(c)) => c.clone(),
            (None, None) => TrainConfig::default(),
        };
        let mut t = Trainer::new(&ck.meta.generator, &ck.meta.discriminator, &cfg)?;
        ck.load_module("gen", &t.gen)?;
        ck.load_module("disc", &t.disc)?;
        for (tag, opt, steps) in [
            ("gen", &mut t.gen_opt, ck.meta.gen_opt_steps),
            ("disc", &mut t.disc_opt, ck.meta.disc_opt_steps),
        ] {
            let mut s = opt.state().clone();
            let m = ck.tensors_under::<f32>(&format!("opt.{tag}.m"))?;
            let v = ck.tensors_under::<f32>(&format!("opt.{tag}.v"))?;
            for (i, name) in s.names.clone().iter().enumerate() {
                let missing = || crate::error::CheckpointError::MissingTensor(format!("opt.{tag}.*.{name}"));
                let (mt, vt) = (m.get(name).ok_or_else(missing)?, v.get(name).ok_or_else(missing)?);
                if mt.shape() != s.shapes[i].as_slice() || vt.shape() != s.shapes[i].as_slice() {
                    return Err(crate::error::CheckpointError::ShapeMismatch {
                        name: format!("opt.{tag}.*.{name}"),
                        expected: s.shapes[i].clone(),
                        found: mt.shape().to_vec(),
                    }
                    .into());
                }
                s.m[i] = mt.to_vec();
                s.v[i] = vt.to_vec();
            }
            s.step = steps;
            opt.set_state(s)?;
        }
        t.step = ck.meta.step;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_pair;
    use crate::data::synth::smooth_texture;

    pub(crate) fn tiny_setup(seed: u64) -> (Trainer, Vec<ImagePair>) {
        let cfg = TrainConfig {
            batch_size: 2,
            seed,
            lr_crop: 16,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let t = Trainer::new(&GeneratorConfig::tiny(), &DiscriminatorConfig::tiny(), &cfg).unwrap();
        let mut rng = Rng::new(seed ^ 0xabc);
        let pairs = (0..2)
            .map(|_| make_pair(&smooth_texture(32, 32, &mut rng), 2).unwrap())
            .collect();
        (t, pairs)
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let (mut t, pairs) = tiny_setup(5);
            let mut recs = Vec::new();
            for s in 0..2 {
                let mut rng = t.step_rng(s);
                recs.push(t.train_step(&pairs, &mut rng).unwrap().tsv_row());
            }
            (recs, t.gen.params()[0].to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn generator_step_leaves_discriminator_untouched() {
        let (mut t, pairs) = tiny_setup(6);
        t.cfg.d_steps_per_g_step = 0;
        let before: Vec<Vec<f32>> = t.disc.params().iter().map(|p| p.to_vec()).collect();
        let g_before = t.gen.params()[0].to_vec();
        let mut rng = t.step_rng(0);
        let rec = t.train_step(&pairs, &mut rng).unwrap();
        assert!(rec.is_finite());
        let after: Vec<Vec<f32>> = t.disc.params().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);
        assert!(t
            .disc
            .params()
            .iter()
            .all(|p| p.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0))));
        assert_ne!(g_before, t.gen.params()[0].to_vec());
    }

    #[test]
    fn discriminator_step_leaves_generator_untouched() {
        let (mut t, pairs) = tiny_setup(7);
        let (lr, hr, scale) = stack_batch(&pairs).unwrap();
        let cond = bicubic_resize(&lr, 32, 32).unwrap();
        let g_before: Vec<Vec<f32>> = t.gen.params().iter().map(|p| p.to_vec()).collect();
        let sr = no_grad(|| t.gen.upscale(&lr, scale)).unwrap().detach();
        let real = t.disc.forward_logits(&hr, &cond, None).unwrap();
        let fake = t.disc.forward_logits(&sr, &cond, None).unwrap();
        adversarial_loss_d(&real, &fake).unwrap().backward().unwrap();
        t.disc_opt.step().unwrap();
        assert!(t.gen.params().iter().all(|p| p.grad().is_none()));
        let g_after: Vec<Vec<f32>> = t.gen.params().iter().map(|p| p.to_vec()).collect();
        assert_eq!(g_before, g_after);
    }

    #[test]
    fn checkpoint_round_trip_restores_state() {
        let (mut t, pairs) = tiny_setup(8);
        let mut rng = t.step_rng(0);
        t.train_step(&pairs, &mut rng).unwrap();
        let ck = t.to_checkpoint();
        let bytes = ck.to_bytes();
        let back = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), None).unwrap();
        assert_eq!(back.step, 1);
        assert_eq!(back.gen_opt.state(), t.gen_opt.state());
        assert_eq!(back.disc_opt.state(), t.disc_opt.state());
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = toml::from_str::<TrainConfig>("stepz = 3").unwrap_err().to_string();
        assert!(err.contains("stepz"));
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}

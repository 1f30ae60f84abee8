use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place. `t` is the 1-based
/// step number.
pub fn adam_update<T: Element>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::of(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    let one = T::one();
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] = param[i] - lr * mh / (vh.sqrt() + eps);
    }
}

/// Moment buffers for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Element = f32> {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

/// Adam over the parameters of one network. Parameters without an
/// accumulated gradient are left untouched.
#[derive(Debug, Clone)]
pub struct Adam<T: Element = f32> {
    pub cfg: AdamConfig,
    params: Vec<Tensor<T>>,
    state: OptimizerState<T>,
}

impl<T: Element> Adam<T> {
    pub fn new(module: &dyn Module<T>, cfg: AdamConfig) -> Self {
        let named = module.named_params();
        let state = OptimizerState {
            names: named.iter().map(|(n, _)| n.clone()).collect(),
            shapes: named.iter().map(|(_, t)| t.shape().to_vec()).collect(),
            m: named.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect(),
            v: named.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect(),
            step: 0,
        };
        Adam {
            cfg,
            params: named.into_iter().map(|(_, t)| t).collect(),
            state,
        }
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.state
    }

    /// Replaces the moment buffers; shapes must mirror the parameters.
    pub fn set_state(&mut self, state: OptimizerState<T>) -> Result<()> {
        if state.names != self.state.names || state.shapes != self.state.shapes {
            return Err(Error::dim("adam", "optimizer state does not match the parameter list"));
        }
        for (i, s) in state.shapes.iter().enumerate() {
            let n: usize = s.iter().product();
            if state.m[i].len() != n || state.v[i].len() != n {
                return Err(Error::dim(
                    "adam",
                    format!("moment buffer size mismatch for {}", state.names[i]),
                ));
            }
        }
        self.state = state;
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step;
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            if g.len() != p.numel() {
                return Err(Error::dim(
                    "adam",
                    format!("gradient size mismatch for {}", self.state.names[i]),
                ));
            }
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            p.update(|d| adam_update(d, &g, m, v, t, &self.cfg))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::join;

    struct One(Tensor<f64>);

    impl Module<f64> for One {
        fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<f64>)) {
            f(join(prefix, "theta"), &self.0);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let p = One(Tensor::from_f64(&[1.0, -2.0], &[2]).unwrap().with_grad());
        let mut opt = Adam::new(&p, AdamConfig::default());
        p.0.sum().scale(0.0).backward().unwrap();
        opt.step().unwrap();
        assert_eq!(p.0.to_vec(), vec![1.0, -2.0]);
        assert_eq!(opt.state().step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let p = One(Tensor::from_f64(&[1.0, -2.0, 0.5], &[3]).unwrap().with_grad());
        let mut opt = Adam::new(&p, AdamConfig::default());
        p.0.mul(&Tensor::from_f64(&[3.0, -0.5, 10.0], &[3]).unwrap())
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        opt.step().unwrap();
        let want = [1.0 - 2e-4, -2.0 + 2e-4, 0.5 - 2e-4];
        for (a, b) in p.0.to_vec().iter().zip(want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ten_steps_descend_quadratic() {
        let p = One(Tensor::from_f64(&[1.0], &[1]).unwrap().with_grad());
        let mut opt = Adam::new(
            &p,
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
        );
        let mut last = 1.0;
        for _ in 0..10 {
            p.0.zero_grad();
            p.0.sqr().sum().backward().unwrap();
            opt.step().unwrap();
            let f = p.0.to_vec()[0].powi(2);
            assert!(f < last);
            last = f;
        }
    }

    #[test]
    fn state_shape_mismatch_rejected() {
        let p = One(Tensor::from_f64(&[1.0], &[1]).unwrap().with_grad());
        let mut opt = Adam::new(&p, AdamConfig::default());
        let mut s = opt.state().clone();
        s.shapes[0] = vec![2];
        assert!(matches!(opt.set_state(s), Err(Error::Dimension { .. })));
    }
}

//! Central finite-difference verification of backward passes.
//!
//! Numeric derivatives use the five-point stencil
//! `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.

use crate::error::Result;
use crate::tensor::{Element, Rng, Tensor};

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-8)` over checked elements.
    pub max_rel_err: f64,
    /// `(leaf index, element index)` where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks `d f / d x` for a scalar-valued `f` at `x`; returns the worst
/// relative error over all elements of `x`.
pub fn grad_check<T: Element>(f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>, x: &Tensor<T>, eps: f64) -> Result<f64> {
    let leaf = x.detach().with_grad();
    let report = grad_check_leaves(|| f(&leaf), std::slice::from_ref(&leaf), eps, None)?;
    Ok(report.max_rel_err)
}

/// Checks the gradients of `loss()` w.r.t. each leaf in `leaves`.
///
/// `sample` limits the check to that many randomly chosen elements per leaf
/// (seeded, so reproducible); `None` checks every element. Leaves are
/// restored to their original values afterwards; their accumulated gradients
/// are cleared.
pub fn grad_check_leaves<T: Element>(
    loss: impl Fn() -> Result<Tensor<T>>,
    leaves: &[Tensor<T>],
    eps: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    for l in leaves {
        l.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<T>> = leaves.iter().map(|l| l.grad_tensor().to_vec()).collect();
    for l in leaves {
        l.zero_grad();
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let eval = || -> Result<f64> { Ok(crate::tensor::no_grad(&loss)?.item()?.as_f64()) };
    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.numel();
        let indices: Vec<usize> = match sample {
            Some((k, seed)) if k < n => {
                let mut rng = Rng::new(seed).fork(li as u64);
                rng.permutation(n).into_iter().take(k).collect()
            }
            _ => (0..n).collect(),
        };
        let original = leaf.to_vec();
        for &i in &indices {
            let x0 = original[i];
            let at = |h: f64| -> Result<f64> {
                leaf.update(|d| d[i] = T::of(x0.as_f64() + h))?;
                eval()
            };
            // five-point central stencil, truncation error O(eps^4)
            let (f1, f_1, f2, f_2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
            leaf.update(|d| d[i] = x0)?;
            let numeric = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * eps);
            let a = analytic[li][i].as_f64();
            let err = relative_error(a, numeric);
            if report.checked == 0 || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (li, i);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

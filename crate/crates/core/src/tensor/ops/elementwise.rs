use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Right operand of a binary elementwise op: same shape, or a single element.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Pairing {
    Same,
    Scalar,
}

fn pairing<T: Element>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<Pairing> {
    if a.shape() == b.shape() {
        Ok(Pairing::Same)
    } else if b.numel() == 1 {
        Ok(Pairing::Scalar)
    } else {
        Err(Error::dim(
            op,
            format!(
                "shapes {:?} and {:?} differ (only scalar broadcast is supported)",
                a.shape(),
                b.shape()
            ),
        ))
    }
}

/// Reduces a full-shape gradient for a right operand that was broadcast.
fn fold_rhs<T: Element>(g: Vec<T>, p: Pairing) -> Vec<T> {
    match p {
        Pairing::Same => g,
        Pairing::Scalar => vec![g.iter().copied().sum()],
    }
}

fn unary<T: Element>(
    x: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    let out: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(
        out,
        x.shape().to_vec(),
        op,
        vec![x.clone()],
        // df(input, output) is the local derivative.
        Box::new(move |g, y, inputs| {
            let x = inputs[0].data();
            let gx = g
                .iter()
                .zip(x.iter().zip(y))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gx)]
        }),
    )
}

impl<T: Element> Tensor<T> {
    fn binary(
        &self,
        rhs: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        grads: impl Fn(T, T, T) -> (T, T) + Send + Sync + 'static,
    ) -> Result<Tensor<T>> {
        let p = pairing(self, rhs, op)?;
        let out: Vec<T> = {
            let a = self.data();
            let b = rhs.data();
            match p {
                Pairing::Same => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
                Pairing::Scalar => a.iter().map(|&x| f(x, b[0])).collect(),
            }
        };
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            op,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _y, inputs| {
                let a = inputs[0].data();
                let b = inputs[1].data();
                let mut ga = Vec::with_capacity(g.len());
                let mut gb = Vec::with_capacity(g.len());
                for i in 0..g.len() {
                    let bv = if p == Pairing::Same { b[i] } else { b[0] };
                    let (da, db) = grads(a[i], bv, g[i]);
                    ga.push(da);
                    gb.push(db);
                }
                let ga = inputs[0].requires_grad().then_some(ga);
                let gb = inputs[1].requires_grad().then(|| fold_rhs(gb, p));
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _, g| (g, -g))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    /// Elementwise quotient; any zero divisor is a numeric-domain error.
    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if let Some(i) = rhs.data().iter().position(|v| v.is_zero()) {
            return Err(Error::NumericDomain {
                op: "div",
                index: i,
                value: 0.0,
            });
        }
        self.binary(rhs, "div", |a, b| a / b, |a, b, g| (g / b, -g * a / (b * b)))
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        unary(self, "scale", |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        unary(self, "add_scalar", |x| x + c, |_, _| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-1.0)
    }

    /// Absolute value; the derivative at 0 is taken as 0.
    pub fn abs(&self) -> Tensor<T> {
        unary(
            self,
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Natural log; non-positive elements are a numeric-domain error.
    pub fn log(&self) -> Result<Tensor<T>> {
        if let Some((i, v)) = self.data().iter().enumerate().find(|(_, v)| !(**v > T::zero())) {
            return Err(Error::NumericDomain {
                op: "log",
                index: i,
                value: v.as_f64(),
            });
        }
        Ok(unary(self, "log", |x| x.ln(), |x, _| T::one() / x))
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |x| x.exp(), |_, y| y)
    }

    pub fn sqr(&self) -> Tensor<T> {
        unary(self, "sqr", |x| x * x, |x, _| x + x)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            self,
            "sigmoid",
            |x| {
                // Evaluated on the branch that cannot overflow.
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    /// Exact GELU, `x * Phi(x)` with `Phi` the standard normal CDF computed
    /// through the error function.
    pub fn gelu(&self) -> Tensor<T> {
        let half = T::of(0.5);
        let inv_sqrt2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        unary(
            self,
            "gelu",
            move |x| x * half * (T::one() + (x * inv_sqrt2).erf()),
            move |x, _| {
                let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                cdf + x * pdf
            },
        )
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        unary(
            self,
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Numerically stable binary cross-entropy on logits against a constant
    /// target: `max(x,0) - x*t + ln(1 + exp(-|x|))`, elementwise.
    pub fn bce_with_logits(&self, target: f64) -> Tensor<T> {
        let t = T::of(target);
        unary(
            self,
            "bce_with_logits",
            move |x| x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p(),
            move |x, _| {
                let s = if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                };
                s - t
            },
        )
    }
}

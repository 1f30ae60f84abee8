use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn last_dim<T: Element>(x: &Tensor<T>, op: &'static str) -> Result<usize> {
    match x.shape().last() {
        Some(&d) if d > 0 => Ok(d),
        _ => Err(Error::dim(
            op,
            format!("needs a non-empty last axis, got {:?}", x.shape()),
        )),
    }
}

impl<T: Element> Tensor<T> {
    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_lastdim(&self) -> Result<Tensor<T>> {
        let d = last_dim(self, "softmax")?;
        let out = {
            let x = self.data();
            if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NumericDomain {
                    op: "softmax",
                    index: i,
                    value: v.as_f64(),
                });
            }
            let mut out = Vec::with_capacity(x.len());
            for row in x.chunks(d) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let start = out.len();
                let mut s = T::zero();
                for &v in row {
                    let e = (v - m).exp();
                    s = s + e;
                    out.push(e);
                }
                out[start..].iter_mut().for_each(|e| *e = *e / s);
            }
            out
        };
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(d).zip(y.chunks(d)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    gx.extend(gr.iter().zip(yr).map(|(&a, &b)| b * (a - dot)));
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`
    /// (both `[D]`). Uses the biased variance.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = last_dim(self, "layer_norm")?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!("gamma {:?} / beta {:?} must be [{d}]", gamma.shape(), beta.shape()),
            ));
        }
        let eps = T::of(eps);
        let inv_d = T::one() / T::of(d as f64);
        // (normalized rows, per-row 1/sigma)
        let normalize = move |x: &[T]| -> (Vec<T>, Vec<T>) {
            let mut xhat = Vec::with_capacity(x.len());
            let mut rstd = Vec::with_capacity(x.len() / d);
            for row in x.chunks(d) {
                let mean = row.iter().copied().sum::<T>() * inv_d;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let r = T::one() / (var + eps).sqrt();
                rstd.push(r);
                xhat.extend(row.iter().map(|&v| (v - mean) * r));
            }
            (xhat, rstd)
        };
        let out = {
            let (xhat, _) = normalize(&self.data());
            let gm = gamma.data();
            let bt = beta.data();
            xhat.iter()
                .enumerate()
                .map(|(i, &v)| gm[i % d] * v + bt[i % d])
                .collect()
        };
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "layer_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, inputs| {
                let (xhat, rstd) = normalize(&inputs[0].data());
                let gm = inputs[1].data();
                let gx = inputs[0].requires_grad().then(|| {
                    let mut gx = Vec::with_capacity(g.len());
                    for (r, (gr, xr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let gg: Vec<T> = gr.iter().zip(gm.iter()).map(|(&a, &b)| a * b).collect();
                        let m1 = gg.iter().copied().sum::<T>() * inv_d;
                        let m2 = gg.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                        gx.extend(gg.iter().zip(xr).map(|(&a, &xh)| rstd[r] * (a - m1 - xh * m2)));
                    }
                    gx
                });
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + gr[j] * xr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                    }
                }
                vec![
                    gx,
                    inputs[1].requires_grad().then_some(dgamma),
                    inputs[2].requires_grad().then_some(dbeta),
                ]
            }),
        ))
    }

    /// Scales each last-axis row to unit Euclidean norm, `x / max(|x|, eps)`.
    pub fn l2_normalize_lastdim(&self, eps: f64) -> Result<Tensor<T>> {
        let d = last_dim(self, "l2_normalize")?;
        let eps = T::of(eps);
        let norms: Vec<T> = self
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps))
            .collect();
        let out = self
            .data()
            .chunks(d)
            .zip(&norms)
            .flat_map(|(r, &n)| r.iter().map(move |&v| v / n))
            .collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "l2_normalize",
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = Vec::with_capacity(g.len());
                for ((gr, yr), &n) in g.chunks(d).zip(y.chunks(d)).zip(&norms) {
                    if n > eps {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        gx.extend(gr.iter().zip(yr).map(|(&a, &b)| (a - b * dot) / n));
                    } else {
                        gx.extend(gr.iter().map(|&a| a / n));
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

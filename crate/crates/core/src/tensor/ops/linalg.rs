use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `out[m,p] = sum_k a[m,k] * b[k,p]` for one matrix pair, rows in parallel.
fn gemm<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, p: usize) {
    debug_assert_eq!(out.len(), m * p);
    let row = |(i, o): (usize, &mut [T])| {
        let ar = &a[i * k..(i + 1) * k];
        for (kk, &av) in ar.iter().enumerate() {
            let br = &b[kk * p..(kk + 1) * p];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov = *ov + av * bv;
            }
        }
    };
    if m * k * p >= 1 << 14 {
        out.par_chunks_mut(p).enumerate().for_each(row);
    } else {
        out.chunks_mut(p).enumerate().for_each(row);
    }
}

fn transpose<T: Element>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

impl<T: Element> Tensor<T> {
    /// Batched matrix product `[.., M, K] x [.., K, P] -> [.., M, P]`.
    ///
    /// Leading extents must agree, except that a rank-2 right operand is
    /// shared by every batch entry (linear layers).
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (ra, rb) = (self.rank(), rhs.rank());
        if ra < 2 || rb < 2 {
            return Err(Error::dim("matmul", "operands must have rank >= 2"));
        }
        let (m, k) = (self.shape()[ra - 2], self.shape()[ra - 1]);
        let (k2, p) = (rhs.shape()[rb - 2], rhs.shape()[rb - 1]);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let shared_rhs = rb == 2;
        if !shared_rhs && self.shape()[..ra - 2] != rhs.shape()[..rb - 2] {
            return Err(Error::dim(
                "matmul",
                format!("batch extents differ: {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let batch: usize = self.shape()[..ra - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * p];
        {
            let a = self.data();
            let b = rhs.data();
            for bi in 0..batch {
                let bo = if shared_rhs { 0 } else { bi * k * p };
                gemm(
                    &a[bi * m * k..(bi + 1) * m * k],
                    &b[bo..bo + k * p],
                    &mut out[bi * m * p..(bi + 1) * m * p],
                    m,
                    k,
                    p,
                );
            }
        }
        let mut shape = self.shape()[..ra - 2].to_vec();
        shape.extend([m, p]);
        Ok(Tensor::from_op(
            out,
            shape,
            "matmul",
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _, inputs| {
                let a = inputs[0].data();
                let b = inputs[1].data();
                let ga = inputs[0].requires_grad().then(|| {
                    // dA = G * B^T
                    let mut ga = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        let bo = if shared_rhs { 0 } else { bi * k * p };
                        let bt = transpose(&b[bo..bo + k * p], k, p);
                        gemm(
                            &g[bi * m * p..(bi + 1) * m * p],
                            &bt,
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            p,
                            k,
                        );
                    }
                    ga
                });
                let gb = inputs[1].requires_grad().then(|| {
                    // dB = A^T * G, summed over batch when B is shared
                    let nb = if shared_rhs { 1 } else { batch };
                    let mut gb = vec![T::zero(); nb * k * p];
                    for bi in 0..batch {
                        let at = transpose(&a[bi * m * k..(bi + 1) * m * k], m, k);
                        let bo = if shared_rhs { 0 } else { bi * k * p };
                        gemm(&at, &g[bi * m * p..(bi + 1) * m * p], &mut gb[bo..bo + k * p], k, m, p);
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}

//! Shape and data-movement ops. Most are expressed as a gather through a
//! precomputed index map, whose adjoint is a scatter-add.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{numel, Element, Tensor};

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Calls `f(flat_index, multi_index)` for every position of `shape` in
/// row-major order.
fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let n = numel(shape);
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..n {
        f(flat, &idx);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn normalize_axis(axis: isize, rank: usize, op: &'static str) -> Result<usize> {
    let r = rank as isize;
    let a = if axis < 0 { r + axis } else { axis };
    if a < 0 || a >= r {
        return Err(Error::dim(op, format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(a as usize)
}

impl<T: Element> Tensor<T> {
    /// `out[i] = self[map[i]]`. Gradients scatter back with `+=`, so maps
    /// that repeat a source index (broadcasts) sum correctly.
    pub(crate) fn gather(&self, map: Arc<Vec<usize>>, shape: Vec<usize>, op: &'static str) -> Tensor<T> {
        debug_assert_eq!(map.len(), numel(&shape));
        let out = {
            let x = self.data();
            map.iter().map(|&j| x[j]).collect()
        };
        let n_in = self.numel();
        Tensor::from_op(
            out,
            shape,
            op,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![T::zero(); n_in];
                for (&j, &gv) in map.iter().zip(g) {
                    gx[j] = gx[j] + gv;
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::dim(
                "reshape",
                format!("cannot reshape {:?} into {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(
                "permute",
                format!("{axes:?} is not a permutation of rank {rank}"),
            ));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let mut map = Vec::with_capacity(self.numel());
        for_each_index(&out_shape, |_, idx| {
            map.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum());
        });
        Ok(self.gather(Arc::new(map), out_shape, "permute"))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::dim("transpose", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(&axes)
    }

    /// Sub-range `start..start+len` along `axis`.
    pub fn narrow(&self, axis: isize, start: usize, len: usize) -> Result<Tensor<T>> {
        let axis = normalize_axis(axis, self.rank(), "narrow")?;
        let extent = self.shape()[axis];
        if start + len > extent {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} exceeds extent {extent}", start + len),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for a in start..start + len {
                let base = (o * extent + a) * inner;
                map.extend(base..base + inner);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(self.gather(Arc::new(map), shape, "narrow"))
    }

    /// Splits `axis` into `n` equal parts.
    pub fn chunk(&self, n: usize, axis: isize) -> Result<Vec<Tensor<T>>> {
        let ax = normalize_axis(axis, self.rank(), "chunk")?;
        let extent = self.shape()[ax];
        if n == 0 || !extent.is_multiple_of(n) {
            return Err(Error::dim("chunk", format!("extent {extent} not divisible by {n}")));
        }
        let len = extent / n;
        (0..n).map(|i| self.narrow(ax as isize, i * len, len)).collect()
    }

    /// Explicit broadcast under the usual right-aligned rules (an extent of 1
    /// stretches). Used for biases, class tokens and per-head scalars.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let r = shape.len();
        if self.rank() > r {
            return Err(Error::dim("broadcast_to", format!("{:?} -> {shape:?}", self.shape())));
        }
        let pad = r - self.rank();
        let in_strides = strides(self.shape());
        let mut eff = vec![0usize; r];
        for i in 0..self.rank() {
            let (s, t) = (self.shape()[i], shape[pad + i]);
            if s == t {
                eff[pad + i] = in_strides[i];
            } else if s != 1 {
                return Err(Error::dim(
                    "broadcast_to",
                    format!("cannot broadcast {:?} to {shape:?}", self.shape()),
                ));
            }
        }
        let mut map = Vec::with_capacity(numel(shape));
        for_each_index(shape, |_, idx| {
            map.push(idx.iter().zip(&eff).map(|(i, s)| i * s).sum());
        });
        Ok(self.gather(Arc::new(map), shape.to_vec(), "broadcast_to"))
    }

    /// Sub-pixel rearrangement `[N, C*r*r, H, W] -> [N, C, H*r, W*r]`, with
    /// `out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor<T>> {
        let [n, crr, h, w] = dims4(self, "pixel_shuffle")?;
        if r == 0 || crr % (r * r) != 0 {
            return Err(Error::dim(
                "pixel_shuffle",
                format!("{crr} channels not divisible by r^2 = {}", r * r),
            ));
        }
        let c = crr / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut map = Vec::with_capacity(self.numel());
        for b in 0..n {
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let src_c = ch * r * r + (y % r) * r + (x % r);
                        map.push(((b * crr + src_c) * h + y / r) * w + x / r);
                    }
                }
            }
        }
        Ok(self.gather(Arc::new(map), vec![n, c, oh, ow], "pixel_shuffle"))
    }

    /// Exact inverse of [`pixel_shuffle`](Self::pixel_shuffle).
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = dims4(self, "pixel_unshuffle")?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::dim(
                "pixel_unshuffle",
                format!("extent {h}x{w} not divisible by {r}"),
            ));
        }
        let (oh, ow, oc) = (h / r, w / r, c * r * r);
        let mut map = Vec::with_capacity(self.numel());
        for b in 0..n {
            for k in 0..oc {
                let (ch, i, j) = (k / (r * r), (k / r) % r, k % r);
                for y in 0..oh {
                    for x in 0..ow {
                        map.push(((b * c + ch) * h + y * r + i) * w + x * r + j);
                    }
                }
            }
        }
        Ok(self.gather(Arc::new(map), vec![n, oc, oh, ow], "pixel_unshuffle"))
    }

    /// Concatenation along `axis`, inputs in argument order.
    /// Extends the two trailing axes by repeating the last row/column
    /// `bottom`/`right` times.
    pub fn pad_replicate(&self, bottom: usize, right: usize) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 || self.shape()[r - 2] == 0 || self.shape()[r - 1] == 0 {
            return Err(Error::dim("pad_replicate", format!("cannot pad {:?}", self.shape())));
        }
        let (h, w) = (self.shape()[r - 2], self.shape()[r - 1]);
        let (oh, ow) = (h + bottom, w + right);
        let planes: usize = self.shape()[..r - 2].iter().product();
        let mut map = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            for y in 0..oh {
                for x in 0..ow {
                    map.push(p * h * w + y.min(h - 1) * w + x.min(w - 1));
                }
            }
        }
        let mut shape = self.shape()[..r - 2].to_vec();
        shape.extend([oh, ow]);
        Ok(self.gather(Arc::new(map), shape, "pad_replicate"))
    }

    pub fn concat(xs: &[Tensor<T>], axis: isize) -> Result<Tensor<T>> {
        let first = xs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let ax = normalize_axis(axis, first.rank(), "concat")?;
        for x in xs {
            let ok = x.rank() == first.rank()
                && x.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == ax || a == b);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!("{:?} incompatible with {:?} along axis {ax}", x.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..ax].iter().product();
        let inner: usize = first.shape()[ax + 1..].iter().product();
        let extents: Vec<usize> = xs.iter().map(|x| x.shape()[ax]).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let datas: Vec<_> = xs.iter().map(|x| x.data()).collect();
            for o in 0..outer {
                for (d, &e) in datas.iter().zip(&extents) {
                    out.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
                }
            }
        }
        let mut shape = first.shape().to_vec();
        shape[ax] = total;
        Ok(Tensor::from_op(
            out,
            shape,
            "concat",
            xs.to_vec(),
            Box::new(move |g, _, inputs| {
                let mut grads: Vec<Vec<T>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gi, &e) in grads.iter_mut().zip(&extents) {
                        gi.extend_from_slice(&g[pos..pos + e * inner]);
                        pos += e * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(inputs)
                    .map(|(gi, x)| x.requires_grad().then_some(gi))
                    .collect()
            }),
        ))
    }

    /// Channel-wise concatenation of `[N, C_i, H, W]` maps.
    pub fn concat_channels(xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        for x in xs {
            dims4(x, "concat_channels")?;
        }
        Tensor::concat(xs, 1)
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![s],
            vec![],
            "sum",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let s: T = self.data().iter().copied().sum();
        let inv = T::one() / T::of(n as f64);
        Tensor::from_op(
            vec![s * inv],
            vec![],
            "mean",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0] * inv; n])]),
        )
    }
}

pub(crate) fn dims4<T: Element>(x: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::dim(op, format!("expected [N,C,H,W], got {:?}", x.shape()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    fn seq(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64)
    }

    #[test]
    fn pixel_shuffle_definition() {
        let x = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0, 4.0], &[1, 4, 1, 1]).unwrap();
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_shuffle_shape_rule() {
        let y = seq(&[2, 8, 3, 5]).pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 6, 10]);
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible_channels() {
        assert!(seq(&[1, 6, 2, 2]).pixel_shuffle(2).is_err());
    }

    #[test]
    fn concat_single_input_is_identity() {
        let x = seq(&[1, 2, 4, 4]);
        assert_eq!(
            Tensor::concat_channels(std::slice::from_ref(&x)).unwrap().to_vec(),
            x.to_vec()
        );
    }

    #[test]
    fn concat_shape_and_slicing() {
        let a = seq(&[1, 2, 4, 4]);
        let b = seq(&[1, 3, 4, 4]).add_scalar(100.0);
        let c = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[1, 5, 4, 4]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().to_vec(), a.to_vec());
        assert_eq!(c.narrow(1, 2, 3).unwrap().to_vec(), b.to_vec());
    }

    #[test]
    fn concat_spatial_mismatch_is_error() {
        let a = seq(&[1, 2, 4, 4]);
        let b = seq(&[1, 2, 4, 5]);
        assert!(matches!(Tensor::concat_channels(&[a, b]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn concat_gradient_splits_back() {
        let a = seq(&[1, 1, 2, 2]).with_grad();
        let b = seq(&[1, 2, 2, 2]).with_grad();
        let w = Tensor::<f64>::from_fn(&[1, 3, 2, 2], |i| i as f64);
        Tensor::concat_channels(&[a.clone(), b.clone()])
            .unwrap()
            .mul(&w)
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        assert_eq!(a.grad().unwrap(), (0..4).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(b.grad().unwrap(), (4..12).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn broadcast_gradient_sums() {
        let b = Tensor::<f64>::ones(&[3]).with_grad();
        b.broadcast_to(&[2, 4, 3]).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![8.0; 3]);
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let x = seq(&[2, 3]);
        assert_eq!(
            x.transpose_last2().unwrap().to_vec(),
            vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]
        );
    }

    #[test]
    fn replicate_pad_repeats_edges() {
        let x = seq(&[1, 2, 2]);
        let y = x.pad_replicate(1, 2).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4]);
        assert_eq!(
            y.to_vec(),
            vec![0.0, 1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 2.0, 3.0, 3.0, 3.0]
        );
        assert_eq!(y.narrow(1, 0, 2).unwrap().narrow(2, 0, 2).unwrap().to_vec(), x.to_vec());
    }

    proptest! {
        #[test]
        fn unshuffle_inverts_shuffle(seed in any::<u64>(), n in 1usize..3, c in 1usize..3, h in 1usize..4, w in 1usize..4) {
            let mut rng = Rng::new(seed);
            let x = Tensor::<f32>::randn(&[n, c * 4, h, w], 1.0, &mut rng);
            let y = x.pixel_shuffle(2).unwrap().pixel_unshuffle(2).unwrap();
            prop_assert_eq!(y.to_vec(), x.to_vec());
            let z = Tensor::<f32>::randn(&[n, c, 2 * h, 2 * w], 1.0, &mut rng);
            prop_assert_eq!(z.pixel_unshuffle(2).unwrap().pixel_shuffle(2).unwrap().to_vec(), z.to_vec());
        }

        #[test]
        fn concat_then_narrow_recovers_inputs(seed in any::<u64>(), c1 in 1usize..4, c2 in 1usize..4) {
            let mut rng = Rng::new(seed);
            let a = Tensor::<f32>::randn(&[2, c1, 3, 3], 1.0, &mut rng);
            let b = Tensor::<f32>::randn(&[2, c2, 3, 3], 1.0, &mut rng);
            let c = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
            prop_assert_eq!(c.narrow(1, 0, c1).unwrap().to_vec(), a.to_vec());
            prop_assert_eq!(c.narrow(1, c1, c2).unwrap().to_vec(), b.to_vec());
        }
    }
}

//! Reductions and layout ops: reshape, permute, concat, slice, expand.

use crate::error::{Error, Result};
use crate::tensor::{strides_of, Tensor};

use super::tape::Var;

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(op, shape, format!("axis {axis} out of range")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn keepdim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

fn permute_data(x: &Tensor, axes: &[usize]) -> Tensor {
    let in_shape = x.shape();
    let in_strides = x.strides();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let mut index = vec![0usize; out_shape.len()];
    let src = x.data();
    // The innermost output axis is walked as a strided run.
    let last = out_shape.len() - 1;
    let (run, run_stride) = (out_shape[last], strides[last]);
    while out.len() < n {
        let base: usize = index[..last].iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.extend((0..run).map(|j| src[base + j * run_stride]));
        for d in (0..last).rev() {
            index[d] += 1;
            if index[d] < out_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

impl<'t> Var<'t> {
    pub fn sum(self) -> Var<'t> {
        let value = Tensor::scalar(self.value().sum());
        self.tape().record(value, &[self], |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item()))]
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean over one axis, keeping it with extent 1.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (outer, n, inner) = split_axis("mean_axis", x.shape(), axis)?;
        let mut out = vec![0.0; outer * inner];
        let src = x.data();
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let value = Tensor::from_parts(keepdim(x.shape(), axis), out);
        Ok(self.tape().record(value, &[self], move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for k in 0..n {
                    let dst = &mut gx[(o * n + k) * inner..(o * n + k + 1) * inner];
                    for (d, v) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                        *d = v / n as f64;
                    }
                }
            }
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx))]
        }))
    }

    /// Maximum over one axis, keeping it with extent 1. Ties send the gradient
    /// to the first maximal entry.
    pub fn max_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (outer, n, inner) = split_axis("max_axis", x.shape(), axis)?;
        let src = x.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let v = src[(o * n + k) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = k;
                    }
                }
            }
        }
        let value = Tensor::from_parts(keepdim(x.shape(), axis), out);
        Ok(self.tape().record(value, &[self], move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let k = arg[o * inner + i];
                    gx[(o * n + k) * inner + i] = g[o * inner + i];
                }
            }
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx))]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value().reshaped(shape)?;
        Ok(self.tape().record(value, &[self], |ctx| {
            vec![Some(ctx.grad.reshaped(ctx.inputs[0].shape()).expect("same numel"))]
        }))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let mut seen = vec![false; x.ndim()];
        if axes.len() != x.ndim() || axes.iter().any(|&a| a >= x.ndim() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", x.shape(), format!("bad axes {axes:?}")));
        }
        let value = permute_data(&x, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.tape().record(value, &[self], move |ctx| {
            vec![Some(permute_data(ctx.grad, &inverse))]
        }))
    }

    /// Swaps two axes.
    pub fn transpose(self, a: usize, b: usize) -> Result<Var<'t>> {
        let mut axes: Vec<usize> = (0..self.value().ndim()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(Error::shape("transpose", &self.shape(), format!("axes {a},{b}")));
        }
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        let (outer, _, inner) = split_axis("concat", &base, axis)?;
        let mut extents = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::dim("concat", &base, s));
            }
            extents.push(s[axis]);
        }
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &n) in values.iter().zip(&extents) {
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let value = Tensor::from_parts(shape, out);
        Ok(first.tape().record(value, parts, move |ctx| {
            let g = ctx.grad.data();
            let mut offset = 0;
            extents
                .iter()
                .enumerate()
                .map(|(p, &n)| {
                    let start = offset;
                    offset += n;
                    ctx.needs[p].then(|| {
                        let mut d = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let row = (o * total + start) * inner;
                            d.extend_from_slice(&g[row..row + n * inner]);
                        }
                        Tensor::from_parts(ctx.inputs[p].shape().to_vec(), d)
                    })
                })
                .collect()
        }))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (outer, n, inner) = split_axis("slice", x.shape(), axis)?;
        if start > end || end > n {
            return Err(Error::shape("slice", x.shape(), format!("range {start}..{end} on axis {axis}")));
        }
        let len = end - start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let row = (o * n + start) * inner;
            out.extend_from_slice(&x.data()[row..row + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::from_parts(shape, out);
        Ok(self.tape().record(value, &[self], move |ctx| {
            let mut gx = vec![0.0; outer * n * inner];
            let g = ctx.grad.data();
            for o in 0..outer {
                let row = (o * n + start) * inner;
                gx[row..row + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx))]
        }))
    }

    /// Repeats a unit axis `n` times.
    pub fn expand_axis(self, axis: usize, n: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (outer, one, inner) = split_axis("expand_axis", x.shape(), axis)?;
        if one != 1 {
            return Err(Error::shape("expand_axis", x.shape(), format!("axis {axis} is not unit")));
        }
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let row = &x.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(row);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = n;
        let value = Tensor::from_parts(shape, out);
        Ok(self.tape().record(value, &[self], move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..n {
                    let row = &g[(o * n + k) * inner..(o * n + k + 1) * inner];
                    for (d, v) in gx[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx))]
        }))
    }
}

/// Offsets of a multi-index under row-major layout; used by tests and oracles.
pub fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    index.iter().zip(strides_of(shape)).map(|(i, s)| i * s).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn permute_matches_index_arithmetic() {
        let tape = Tape::new();
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let y = tape.constant(t.clone()).permute(&[2, 0, 1]).unwrap().to_tensor();
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y.at(&[c, a, b]), t.at(&[a, b, c]));
                }
            }
        }
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let tape = Tape::new();
        let a = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let b = Tensor::from_fn(&[2, 1, 2], |i| 100.0 + i as f64);
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = Var::concat(&[va, vb], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 4, 2]);
        assert_eq!(c.slice(1, 0, 3).unwrap().to_tensor(), a);
        assert_eq!(c.slice(1, 3, 4).unwrap().to_tensor(), b);
    }

    #[test]
    fn concat_rejects_mismatched_extents() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(Var::concat(&[a, b], 1).is_err());
        assert!(Var::concat(&[a, b], 0).is_ok());
    }

    #[test]
    fn channel_pools() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 3, 1, 2], vec![1.0, 5.0, 4.0, 2.0, 7.0, 0.0]).unwrap());
        assert_eq!(x.max_axis(1).unwrap().value().data(), &[7.0, 5.0]);
        assert_eq!(x.mean_axis(1).unwrap().value().data(), &[4.0, 7.0 / 3.0]);
    }

    #[test]
    fn flat_index_is_row_major() {
        assert_eq!(flat_index(&[2, 3, 4], &[1, 2, 3]), 23);
    }
}

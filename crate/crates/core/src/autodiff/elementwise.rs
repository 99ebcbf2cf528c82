//! Pointwise arithmetic and activations.
//!
//! Binary ops accept either equal shapes or a right operand whose shape is a
//! suffix of the left one (broadcast over leading extents). Nothing else
//! broadcasts; reshape explicitly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::Var;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

fn broadcast_inner(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    if rhs.len() > lhs.len() || lhs[lhs.len() - rhs.len()..] != *rhs {
        return Err(Error::dim(op, lhs, rhs));
    }
    Ok(rhs.iter().product())
}

/// Sums `g` (shape = lhs) down to the trailing block of `inner` elements.
fn reduce_to_inner(g: &Tensor, rhs_shape: &[usize], inner: usize) -> Tensor {
    if g.numel() == inner {
        return g.reshaped(rhs_shape).expect("same numel");
    }
    let mut out = vec![0.0; inner];
    for chunk in g.data().chunks_exact(inner) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(rhs_shape.to_vec(), out)
}

fn unary<'t>(
    x: Var<'t>,
    f: impl Fn(f64) -> f64,
    // derivative from (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'t> {
    let value = x.value().map(f);
    x.tape().record(value, &[x], move |ctx| {
        let data = ctx
            .grad
            .data()
            .iter()
            .zip(ctx.inputs[0].data())
            .zip(ctx.output.data())
            .map(|((g, &xi), &yi)| g * df(xi, yi))
            .collect();
        vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))]
    })
}

pub(crate) fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// fallible, so not the operator traits
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        debug_assert!(self.same_tape(&rhs));
        let (a, b) = (self.value(), rhs.value());
        let inner = broadcast_inner("add", a.shape(), b.shape())?;
        let mut out = (*a).clone();
        for chunk in out.data_mut().chunks_exact_mut(inner) {
            for (o, v) in chunk.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        let rhs_shape = b.shape().to_vec();
        Ok(self.tape().record(out, &[self, rhs], move |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.clone()),
                ctx.needs[1].then(|| reduce_to_inner(ctx.grad, &rhs_shape, inner)),
            ]
        }))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.add(rhs.scale(-1.0))
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        debug_assert!(self.same_tape(&rhs));
        let (a, b) = (self.value(), rhs.value());
        let inner = broadcast_inner("mul", a.shape(), b.shape())?;
        let mut out = (*a).clone();
        for chunk in out.data_mut().chunks_exact_mut(inner) {
            for (o, v) in chunk.iter_mut().zip(b.data()) {
                *o *= v;
            }
        }
        let rhs_shape = b.shape().to_vec();
        Ok(self.tape().record(out, &[self, rhs], move |ctx| {
            let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
            let ga = ctx.needs[0].then(|| {
                let mut g = ctx.grad.clone();
                for chunk in g.data_mut().chunks_exact_mut(inner) {
                    for (o, v) in chunk.iter_mut().zip(b.data()) {
                        *o *= v;
                    }
                }
                g
            });
            let gb = ctx.needs[1].then(|| {
                let prod = ctx.grad.zip_map(a, |g, x| g * x).expect("same shape");
                reduce_to_inner(&prod, &rhs_shape, inner)
            });
            vec![ga, gb]
        }))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        unary(self, |x| x * factor, move |_, _| factor)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        unary(self, |x| x + c, |_, _| 1.0)
    }

    pub fn relu(self) -> Var<'t> {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(self) -> Var<'t> {
        unary(self, sigmoid, |_, y| y * (1.0 - y))
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t> {
        unary(self, gelu, |x, _| gelu_grad(x))
    }

    /// |x|; the subgradient at 0 is taken as 0.
    pub fn abs(self) -> Var<'t> {
        unary(self, f64::abs, |x, _| x.signum() * (x != 0.0) as u8 as f64)
    }

    pub fn exp(self) -> Var<'t> {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        unary(
            self,
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }
}

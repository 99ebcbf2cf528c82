//! Softmax and the two normalizations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::shape_ops::split_axis;
use super::tape::Var;

/// Batch statistics observed by a training-mode batch norm (biased variance).
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Elements reduced per channel.
    pub count: usize,
}

fn check_affine(op: &'static str, x: &[usize], gain: &[usize], bias: &[usize], extent: usize) -> Result<()> {
    if gain != [extent] || bias != [extent] {
        return Err(Error::dim(op, x, gain));
    }
    Ok(())
}

/// Shared backward of "normalize a group, then scale": given `xhat` and
/// `dxhat` of one group, writes `dx`.
fn normalized_group_backward(xhat: &[f64], dxhat: &[f64], inv_std: f64, dx: &mut [f64]) {
    let n = xhat.len() as f64;
    let mean_d: f64 = dxhat.iter().sum::<f64>() / n;
    let mean_dx: f64 = dxhat.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / n;
    for ((o, d), x) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *o = inv_std * (d - mean_d - x * mean_dx);
    }
}

impl<'t> Var<'t> {
    /// Softmax along `axis`, computed with the row maximum subtracted.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if !x.all_finite() {
            return Err(Error::Numeric {
                context: "softmax".into(),
                detail: "non-finite input".into(),
            });
        }
        let (outer, n, inner) = split_axis("softmax", x.shape(), axis)?;
        let src = x.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[at(k)] /= total;
                }
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.tape().record(value, &[self], move |ctx| {
            let (y, g) = (ctx.output.data(), ctx.grad.data());
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..n {
                        gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), gx))]
        }))
    }

    /// Layer normalization over the last axis only; no statistic crosses rows.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", x.shape(), "scalar input"))?;
        let (gv, bv) = (gain.value(), bias.value());
        check_affine("layer_norm", x.shape(), gv.shape(), bv.shape(), d)?;

        let rows = x.numel() / d;
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.tape().record(value, &[self, gain, bias], move |ctx| {
            let g = ctx.grad.data();
            let gamma = ctx.inputs[1].data();
            let gx = ctx.needs[0].then(|| {
                let mut gx = vec![0.0; g.len()];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        dxhat[j] = g[r * d + j] * gamma[j];
                    }
                    normalized_group_backward(
                        &xhat[r * d..(r + 1) * d],
                        &dxhat,
                        inv_std[r],
                        &mut gx[r * d..(r + 1) * d],
                    );
                }
                Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx)
            });
            let (mut dgain, mut dbias) = (vec![0.0; d], vec![0.0; d]);
            for r in 0..rows {
                for j in 0..d {
                    dgain[j] += g[r * d + j] * xhat[r * d + j];
                    dbias[j] += g[r * d + j];
                }
            }
            vec![
                gx,
                Some(Tensor::from_parts(vec![d], dgain)),
                Some(Tensor::from_parts(vec![d], dbias)),
            ]
        }))
    }

    /// Training-mode batch norm on `(B, C, H, W)`: per-channel statistics over
    /// batch and space. Returns the observed moments for running-stat updates.
    pub fn batch_norm_train(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<(Var<'t>, BatchMoments)> {
        let x = self.value();
        let &[b, c, h, w] = x.shape() else {
            return Err(Error::shape("batch_norm", x.shape(), "expected (B, C, H, W)"));
        };
        if b < 2 {
            return Err(Error::DegenerateBatch(x.shape().to_vec()));
        }
        let (gv, bv) = (gain.value(), bias.value());
        check_affine("batch_norm", x.shape(), gv.shape(), bv.shape(), c)?;
        let hw = h * w;
        let count = b * hw;
        let src = x.data();
        let channel = move |ch: usize| (0..b).flat_map(move |n| (n * c + ch) * hw..(n * c + ch + 1) * hw);

        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for ch in 0..c {
            let m = channel(ch).map(|i| src[i]).sum::<f64>() / count as f64;
            let v = channel(ch).map(|i| (src[i] - m).powi(2)).sum::<f64>() / count as f64;
            let s = 1.0 / (v + eps).sqrt();
            for i in channel(ch) {
                xhat[i] = (src[i] - m) * s;
                out[i] = xhat[i] * gv.data()[ch] + bv.data()[ch];
            }
            mean[ch] = m;
            var[ch] = v;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let moments = BatchMoments {
            mean,
            var,
            count,
        };
        let y = self.tape().record(value, &[self, gain, bias], move |ctx| {
            let g = ctx.grad.data();
            let gamma = ctx.inputs[1].data();
            let (mut dgain, mut dbias) = (vec![0.0; c], vec![0.0; c]);
            let mut gx = ctx.needs[0].then(|| vec![0.0; g.len()]);
            let mut group_x = vec![0.0; count];
            let mut group_d = vec![0.0; count];
            let mut group_out = vec![0.0; count];
            for ch in 0..c {
                for (j, i) in channel(ch).enumerate() {
                    group_x[j] = xhat[i];
                    group_d[j] = g[i] * gamma[ch];
                    dgain[ch] += g[i] * xhat[i];
                    dbias[ch] += g[i];
                }
                if let Some(gx) = gx.as_mut() {
                    normalized_group_backward(&group_x, &group_d, inv_std[ch], &mut group_out);
                    for (j, i) in channel(ch).enumerate() {
                        gx[i] = group_out[j];
                    }
                }
            }
            vec![
                gx.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
                Some(Tensor::from_parts(vec![c], dgain)),
                Some(Tensor::from_parts(vec![c], dbias)),
            ]
        });
        Ok((y, moments))
    }

    /// Eval-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(
        self,
        gain: Var<'t>,
        bias: Var<'t>,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let &[_, c, h, w] = x.shape() else {
            return Err(Error::shape("batch_norm", x.shape(), "expected (B, C, H, W)"));
        };
        let (gv, bv) = (gain.value(), bias.value());
        check_affine("batch_norm", x.shape(), gv.shape(), bv.shape(), c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::dim("batch_norm", x.shape(), &[running_mean.len()]));
        }
        let hw = h * w;
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let xhat: Vec<f64> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / hw) % c;
                (v - mean[ch]) * inv_std[ch]
            })
            .collect();
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / hw) % c;
                v * gv.data()[ch] + bv.data()[ch]
            })
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.tape().record(value, &[self, gain, bias], move |ctx| {
            let g = ctx.grad.data();
            let gamma = ctx.inputs[1].data();
            let (mut dgain, mut dbias) = (vec![0.0; c], vec![0.0; c]);
            let mut gx = vec![0.0; g.len()];
            for (i, gi) in g.iter().enumerate() {
                let ch = (i / hw) % c;
                gx[i] = gi * gamma[ch] * inv_std[ch];
                dgain[ch] += gi * xhat[i];
                dbias[ch] += gi;
            }
            vec![
                Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx)),
                Some(Tensor::from_parts(vec![c], dgain)),
                Some(Tensor::from_parts(vec![c], dbias)),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn uniform_logits_give_uniform_softmax() {
        let tape = Tape::new();
        let y = tape.constant(Tensor::zeros(&[3])).softmax(0).unwrap().to_tensor();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_does_not_overflow() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2], vec![1000.0, 0.0]).unwrap());
        let y = x.softmax(0).unwrap().to_tensor();
        assert!((y.data()[0] - 1.0).abs() < 1e-12 && y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2], vec![f64::NAN, 0.0]).unwrap());
        assert!(x.softmax(0).is_err());
    }

    #[test]
    fn constant_row_layer_norm_gives_bias() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 4], 7.0));
        let gain = tape.constant(Tensor::ones(&[4]));
        let bias = tape.constant(Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let y = x.layer_norm(gain, bias, 1e-5).unwrap().to_tensor();
        assert_eq!(y.data(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn layer_norm_is_batch_independent() {
        let tape = Tape::new();
        let token = [0.3, -1.2, 2.5, 0.7];
        let mut a = token.to_vec();
        a.extend([9.0, 9.5, -3.0, 1.0]);
        let mut b = vec![-50.0, 0.0, 4.0, 100.0];
        b.extend(token);
        let gain = tape.constant(Tensor::ones(&[4]));
        let bias = tape.constant(Tensor::zeros(&[4]));
        let ya = tape.constant(Tensor::new(&[2, 4], a).unwrap()).layer_norm(gain, bias, 1e-5).unwrap().to_tensor();
        let yb = tape.constant(Tensor::new(&[2, 4], b).unwrap()).layer_norm(gain, bias, 1e-5).unwrap().to_tensor();
        assert_eq!(&ya.data()[..4], &yb.data()[4..]);
    }

    #[test]
    fn eval_batch_norm_with_unit_stats_is_identity_up_to_eps() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64 * 0.1 - 1.0);
        let gain = tape.constant(Tensor::ones(&[3]));
        let bias = tape.constant(Tensor::zeros(&[3]));
        let y = tape
            .constant(x.clone())
            .batch_norm_eval(gain, bias, &[0.0; 3], &[1.0; 3], 1e-5)
            .unwrap()
            .to_tensor();
        assert!(y.max_abs_diff(&x.map(|v| v / (1.0f64 + 1e-5).sqrt())) < 1e-15);
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn training_batch_norm_on_two_constant_maps() {
        let tape = Tape::new();
        let mut data = vec![0.0; 4];
        data.extend([2.0; 4]);
        let x = tape.constant(Tensor::new(&[2, 1, 2, 2], data).unwrap());
        let gain = tape.constant(Tensor::ones(&[1]));
        let bias = tape.constant(Tensor::zeros(&[1]));
        let (y, m) = x.batch_norm_train(gain, bias, 1e-5).unwrap();
        assert_eq!(m.mean, vec![1.0]);
        assert_eq!(m.var, vec![1.0]);
        let y = y.to_tensor();
        for (i, v) in y.data().iter().enumerate() {
            let want = if i < 4 { -1.0 } else { 1.0 };
            assert!((v - want).abs() < 1e-5);
        }
    }

    #[test]
    fn training_batch_norm_rejects_single_sample() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(x.batch_norm_train(g, b, 1e-5).is_err());
    }
}

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::params::{ParamBuilder, ParamId};
use super::session::{Mode, Session};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const LINEAR_INIT_STD: f64 = 0.02;

/// `y = x W + b` over the last axis; `W` is stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let mut pb = pb.scope(name);
        let w = Tensor::trunc_normal(&[in_dim, out_dim], LINEAR_INIT_STD, pb.rng());
        let weight = pb.trainable("weight", w);
        let bias = bias.then(|| pb.trainable("bias", Tensor::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.last() != Some(&self.in_dim) {
            return Err(Error::dim("linear", &shape, &[self.in_dim, self.out_dim]));
        }
        let y = x.matmul(s.param(self.weight))?;
        s.count_layer_macs(shape.iter().product::<usize>() * self.out_dim);
        match self.bias {
            Some(b) => y.add(s.param(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, dim: usize) -> Self {
        let mut pb = pb.scope(name);
        Self {
            gain: pb.trainable("weight", Tensor::ones(&[dim])),
            bias: pb.trainable("bias", Tensor::zeros(&[dim])),
            dim,
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(s.param(self.gain), s.param(self.bias), NORM_EPS)
    }
}

/// Square-kernel 2-D convolution with bias, He-normal initialized.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, in_ch: usize, out_ch: usize, kernel: usize, padding: usize) -> Self {
        let mut pb = pb.scope(name);
        let fan_in = (in_ch * kernel * kernel) as f64;
        let w = Tensor::randn(&[out_ch, in_ch, kernel, kernel], pb.rng()).map(|v| v * (2.0 / fan_in).sqrt());
        Self {
            weight: pb.trainable("weight", w),
            bias: Some(pb.trainable("bias", Tensor::zeros(&[out_ch]))),
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            padding,
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let bias = self.bias.map(|b| s.param(b));
        let y = x.conv2d(s.param(self.weight), bias, self.stride, self.padding)?;
        let shape = y.shape();
        s.count_layer_macs(shape.iter().product::<usize>() * self.in_ch * self.kernel * self.kernel);
        Ok(y)
    }
}

/// Batch norm over `(B, C, H, W)` with running statistics kept as buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, channels: usize) -> Self {
        let mut pb = pb.scope(name);
        Self {
            gain: pb.trainable("weight", Tensor::ones(&[channels])),
            bias: pb.trainable("bias", Tensor::zeros(&[channels])),
            running_mean: pb.buffer("running_mean", Tensor::zeros(&[channels])),
            running_var: pb.buffer("running_var", Tensor::ones(&[channels])),
            channels,
            momentum: BN_MOMENTUM,
        }
    }

    /// Training mode normalizes with batch statistics and queues the
    /// running-stat update (unbiased variance) on the session.
    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let (gain, bias) = (s.param(self.gain), s.param(self.bias));
        match s.mode() {
            Mode::Train => {
                let (y, moments) = x.batch_norm_train(gain, bias, NORM_EPS)?;
                let m = self.momentum;
                let n = moments.count as f64;
                let old_mean = s.store().get(self.running_mean);
                let old_var = s.store().get(self.running_var);
                let mean = Tensor::from_fn(&[self.channels], |c| (1.0 - m) * old_mean.data()[c] + m * moments.mean[c]);
                let var = Tensor::from_fn(&[self.channels], |c| {
                    (1.0 - m) * old_var.data()[c] + m * moments.var[c] * n / (n - 1.0)
                });
                s.push_state_update(self.running_mean, mean);
                s.push_state_update(self.running_var, var);
                Ok(y)
            }
            Mode::Eval => {
                let mean = s.store().get(self.running_mean);
                let var = s.store().get(self.running_var);
                x.batch_norm_eval(gain, bias, mean.data(), var.data(), NORM_EPS)
            }
        }
    }
}

/// conv3x3 → BN → ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        let mut pb = pb.scope(name);
        Self {
            conv: Conv2d::new(&mut pb, "conv", in_ch, out_ch, 3, 1),
            bn: BatchNorm2d::new(&mut pb, "bn", out_ch),
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.conv.forward(s, x)?;
        Ok(self.bn.forward(s, y)?.relu())
    }
}

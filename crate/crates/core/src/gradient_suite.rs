//! Finite-difference checks of every differentiable op, a few composite
//! layers, and one probe through the whole network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_gradients, relative_error, weighted_sum};
use crate::autodiff::{Tape, Var, Window};
use crate::error::{Error, Result};
use crate::loss::{cross_entropy, total_loss};
use crate::model::attention::scaled_dot_attention;
use crate::model::{FusionPolicy, ModelConfig, SiaTrans};
use crate::nn::{ParamId, ParamStore, Session};
use crate::tensor::Tensor;
use crate::train::init_model;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const OP_STEP: f64 = 1e-5;
const OP_PROBES: usize = 24;
/// Smaller step through the network keeps perturbations off ReLU kinks.
const E2E_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

type OpFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

fn case(name: &str, inputs: Vec<Tensor>, f: OpFn) -> (String, Vec<Tensor>, OpFn) {
    (name.to_string(), inputs, f)
}

macro_rules! op {
    ($name:expr, [$($input:expr),+], |$v:ident| $body:expr) => {
        case($name, vec![$($input),+], Box::new(|_t, $v| $body))
    };
}

fn op_cases() -> Vec<(String, Vec<Tensor>, OpFn)> {
    let pair = || vec![randn(&[3, 4], 1), randn(&[3, 4], 2)];
    let x = || randn(&[4, 5], 3);
    let positive = Tensor::rand_uniform(&[4, 5], 0.2, 2.0, &mut ChaCha8Rng::seed_from_u64(4));
    let map_target = Tensor::rand_uniform(&[2, 1, 3, 3], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5))
        .map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    vec![
        case("add", pair(), Box::new(|_, v| weighted_sum(v[0].add(v[1])?, 10))),
        case("sub", pair(), Box::new(|_, v| weighted_sum(v[0].sub(v[1])?, 11))),
        case("mul", pair(), Box::new(|_, v| weighted_sum(v[0].mul(v[1])?, 12))),
        op!("broadcast add", [randn(&[2, 3, 4], 13), randn(&[4], 14)], |v| weighted_sum(v[0].add(v[1])?, 15)),
        op!("broadcast mul", [randn(&[2, 3, 4], 16), randn(&[3, 4], 17)], |v| weighted_sum(v[0].mul(v[1])?, 18)),
        op!("scale", [x()], |v| weighted_sum(v[0].scale(-2.5), 19)),
        op!("add_scalar", [x()], |v| weighted_sum(v[0].add_scalar(0.7), 20)),
        op!("relu", [x()], |v| weighted_sum(v[0].relu(), 21)),
        op!("sigmoid", [x()], |v| weighted_sum(v[0].sigmoid(), 22)),
        op!("gelu", [x()], |v| weighted_sum(v[0].gelu(), 23)),
        op!("abs", [x()], |v| weighted_sum(v[0].abs(), 24)),
        op!("exp", [x()], |v| weighted_sum(v[0].exp(), 25)),
        op!("ln", [positive.clone()], |v| weighted_sum(v[0].ln(), 26)),
        op!("clamp", [x()], |v| weighted_sum(v[0].clamp(-0.6, 0.8), 27)),
        op!("sum", [x()], |v| Ok(v[0].mul(v[0])?.sum())),
        op!("mean", [x()], |v| Ok(v[0].mul(v[0])?.mean())),
        op!("mean_axis", [randn(&[2, 3, 4], 28)], |v| weighted_sum(v[0].mean_axis(1)?, 29)),
        op!("max_axis", [randn(&[2, 3, 4], 30)], |v| weighted_sum(v[0].max_axis(1)?, 31)),
        op!("reshape", [randn(&[2, 3, 4], 32)], |v| weighted_sum(v[0].reshape(&[6, 4])?, 33)),
        op!("permute", [randn(&[2, 3, 4], 34)], |v| weighted_sum(v[0].permute(&[2, 0, 1])?, 35)),
        op!("transpose", [randn(&[2, 3, 4], 36)], |v| weighted_sum(v[0].transpose(1, 2)?, 37)),
        op!("slice", [randn(&[2, 3, 4], 38)], |v| weighted_sum(v[0].slice(1, 1, 3)?, 39)),
        op!("concat", [randn(&[2, 3, 4], 40), randn(&[2, 1, 4], 41)], |v| weighted_sum(Var::concat(v, 1)?, 42)),
        op!("expand_axis", [randn(&[2, 1, 4], 43)], |v| weighted_sum(v[0].expand_axis(1, 3)?, 44)),
        op!("matmul", [randn(&[3, 4], 45), randn(&[4, 2], 46)], |v| weighted_sum(v[0].matmul(v[1])?, 47)),
        op!("batched matmul", [randn(&[2, 3, 4], 48), randn(&[2, 4, 5], 49)], |v| {
            weighted_sum(v[0].matmul(v[1])?, 50)
        }),
        op!("shared-rhs matmul", [randn(&[2, 3, 4], 51), randn(&[4, 5], 52)], |v| {
            weighted_sum(v[0].matmul(v[1])?, 53)
        }),
        op!("softmax", [randn(&[2, 4, 3], 54)], |v| weighted_sum(v[0].softmax(1)?, 55)),
        op!("layer_norm", [randn(&[2, 3, 8], 56), randn(&[8], 57), randn(&[8], 58)], |v| {
            weighted_sum(v[0].layer_norm(v[1], v[2], 1e-5)?, 59)
        }),
        op!("batch_norm train", [randn(&[4, 3, 5, 5], 60), randn(&[3], 61), randn(&[3], 62)], |v| {
            weighted_sum(v[0].batch_norm_train(v[1], v[2], 1e-5)?.0, 63)
        }),
        op!("batch_norm eval", [randn(&[2, 3, 4, 4], 64), randn(&[3], 65), randn(&[3], 66)], |v| {
            weighted_sum(v[0].batch_norm_eval(v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)?, 67)
        }),
        op!("conv2d 3x3", [randn(&[1, 2, 5, 5], 68), randn(&[3, 2, 3, 3], 69), randn(&[3], 70)], |v| {
            weighted_sum(v[0].conv2d(v[1], Some(v[2]), 1, 1)?, 71)
        }),
        op!("conv2d 1x1", [randn(&[2, 4, 3, 3], 72), randn(&[2, 4, 1, 1], 73)], |v| {
            weighted_sum(v[0].conv2d(v[1], None, 1, 0)?, 74)
        }),
        op!("unfold 3/2/1", [randn(&[2, 2, 8, 8], 75)], |v| weighted_sum(v[0].unfold(Window::new(3, 2, 1))?, 76)),
        op!("unfold 7/4/2", [randn(&[1, 3, 16, 16], 77)], |v| weighted_sum(v[0].unfold(Window::new(7, 4, 2))?, 78)),
        op!("upsample_bilinear", [randn(&[1, 2, 3, 4], 79)], |v| weighted_sum(v[0].upsample_bilinear(7, 9)?, 80)),
        op!("attention", [randn(&[2, 2, 5, 4], 81), randn(&[2, 2, 6, 4], 82), randn(&[2, 2, 6, 4], 83)], |v| {
            weighted_sum(scaled_dot_attention(v[0], v[1], v[2])?, 84)
        }),
        case(
            "cross_entropy",
            vec![randn(&[2, 1, 3, 3], 85)],
            Box::new(move |t, v| cross_entropy(v[0].sigmoid(), t.constant(map_target.clone()))),
        ),
    ]
}

/// Every op case, each probed at random elements.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    op_cases()
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = check_gradients(&inputs, OP_PROBES, OP_STEP, &mut rng, f)?;
            Ok(CheckResult {
                name,
                probes: report.probes.len(),
                max_rel_err: report.max_rel_err(),
                tolerance: OP_TOLERANCE,
            })
        })
        .collect()
}

/// A small network in every stage, with the adaptive fusion path on.
pub fn probe_config() -> ModelConfig {
    let mut cfg = ModelConfig::desk().with_image_size(32);
    cfg.encoder.token_dim = 8;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.heads = 2;
    cfg.encoder.ffn_hidden = 24;
    cfg.encoder.depth = 1;
    cfg.cmf.in_dim = 16;
    cfg.cmf.dim = 8;
    cfg.cmf.heads = 1;
    cfg.cmf.ffn_hidden = 16;
    cfg.decoder.in_dim = 8;
    cfg.decoder.side_dim = 8;
    cfg.decoder.widths = [6, 5, 4];
    cfg
}

/// Prefixes of the parameters probed end to end, one element each.
pub const PROBED_PARAMS: [&str; 6] = [
    "encoder.t2t1.",
    "encoder.blocks.",
    "cmf.interactive.",
    "cmf.layers.",
    "decoder.fusion.",
    "decoder.head.",
];

fn training_loss(model: &SiaTrans, store: &ParamStore, inputs: &[Tensor; 4]) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let tape = Tape::new();
    let s = Session::training(&tape, store);
    let p = model.forward(&s, s.input(inputs[0].clone()), s.input(inputs[1].clone()), FusionPolicy::Cross)?;
    let (loss, _) = total_loss(
        &p.supervised_maps(),
        s.input(inputs[2].clone()),
        p.class_logit,
        Some(s.input(inputs[3].clone())),
        &[1.0; 7],
    )?;
    let grads = tape.backward(loss)?;
    Ok((loss.value().item(), s.param_grads(&grads)))
}

/// The full training loss (all seven maps and the classifier, batch of two
/// in training mode) differentiated with respect to selected parameters.
pub fn end_to_end_probe(seed: u64) -> Result<CheckResult> {
    let cfg = probe_config();
    let (model, mut store) = init_model(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let size = cfg.image_size();
    let inputs = [
        Tensor::randn(&[2, 3, size, size], &mut rng),
        Tensor::randn(&[2, 3, size, size], &mut rng),
        Tensor::rand_uniform(&[2, 1, size, size], 0.0, 1.0, &mut rng).map(|v| if v > 0.5 { 1.0 } else { 0.0 }),
        Tensor::new(&[2], vec![1.0, 0.0])?,
    ];
    let (_, analytic) = training_loss(&model, &store, &inputs)?;
    let mut worst: f64 = 0.0;
    for prefix in PROBED_PARAMS {
        let candidates: Vec<_> = store.trainable().filter(|(_, e)| e.name.starts_with(prefix)).map(|(id, _)| id).collect();
        if candidates.is_empty() {
            return Err(Error::Usage(format!("no parameter under {prefix}")));
        }
        let id = candidates[rng.gen_range(0..candidates.len())];
        let element = rng.gen_range(0..store.get(id).numel());
        let a = analytic
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, t)| t.data()[element])
            .ok_or_else(|| Error::Usage(format!("{} received no gradient", store.entry(id).name)))?;
        let original = store.get(id).data()[element];
        store.get_mut(id).data_mut()[element] = original + E2E_STEP;
        let plus = training_loss(&model, &store, &inputs)?.0;
        store.get_mut(id).data_mut()[element] = original - E2E_STEP;
        let minus = training_loss(&model, &store, &inputs)?.0;
        store.get_mut(id).data_mut()[element] = original;
        let numeric = (plus - minus) / (2.0 * E2E_STEP);
        let err = relative_error(a, numeric);
        log::debug!("{}[{element}]: analytic {a:.6e} numeric {numeric:.6e} rel {err:.2e}", store.entry(id).name);
        worst = worst.max(err);
    }
    Ok(CheckResult {
        name: "end-to-end".into(),
        probes: PROBED_PARAMS.len(),
        max_rel_err: worst,
        tolerance: END_TO_END_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_probed_prefix_names_parameters() {
        let (_, store) = init_model(&probe_config(), 0).unwrap();
        for prefix in PROBED_PARAMS {
            assert!(store.trainable().any(|(_, e)| e.name.starts_with(prefix)), "{prefix}");
        }
    }
}

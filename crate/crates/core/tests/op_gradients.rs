//! Reverse-mode gradients of every differentiable op against central finite
//! differences (h = 1e-5, f64).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siatrans::autodiff::gradcheck::{check_gradients, weighted_sum};
use siatrans::autodiff::{Tape, Var, Window};
use siatrans::{Result, Tensor};

const STEP: f64 = 1e-5;
const PROBES: usize = 24;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut rng(seed))
}

fn assert_grad<F>(name: &str, inputs: &[Tensor], tol: f64, f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let report = check_gradients(inputs, PROBES, STEP, &mut rng(99), f).unwrap();
    let worst = report.worst().unwrap();
    assert!(
        report.passes(tol),
        "{name}: worst probe {worst:?} exceeds {tol:e}"
    );
}

#[test]
fn matmul_grads() {
    assert_grad("matmul", &[randn(&[3, 4], 1), randn(&[4, 2], 2)], 1e-6, |_, v| {
        weighted_sum(v[0].matmul(v[1])?, 7)
    });
    assert_grad("batched matmul", &[randn(&[2, 3, 4], 3), randn(&[2, 4, 5], 4)], 1e-6, |_, v| {
        weighted_sum(v[0].matmul(v[1])?, 8)
    });
    assert_grad("shared rhs matmul", &[randn(&[2, 3, 4], 5), randn(&[4, 5], 6)], 1e-6, |_, v| {
        weighted_sum(v[0].matmul(v[1])?, 9)
    });
}

#[test]
fn softmax_grads() {
    assert_grad("softmax", &[randn(&[5], 10)], 1e-6, |_, v| weighted_sum(v[0].softmax(0)?, 11));
    assert_grad("softmax axis 1", &[randn(&[2, 4, 3], 12)], 1e-6, |_, v| {
        weighted_sum(v[0].softmax(1)?, 13)
    });
}

#[test]
fn layer_norm_grads() {
    let inputs = [randn(&[2, 3, 8], 20), randn(&[8], 21), randn(&[8], 22)];
    assert_grad("layer_norm", &inputs, 1e-5, |_, v| {
        weighted_sum(v[0].layer_norm(v[1], v[2], 1e-5)?, 23)
    });
}

#[test]
fn batch_norm_grads() {
    let inputs = [randn(&[4, 3, 8, 8], 30), randn(&[3], 31), randn(&[3], 32)];
    assert_grad("batch_norm train", &inputs, 1e-5, |_, v| {
        weighted_sum(v[0].batch_norm_train(v[1], v[2], 1e-5)?.0, 33)
    });
    assert_grad("batch_norm eval", &inputs, 1e-5, |_, v| {
        weighted_sum(v[0].batch_norm_eval(v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)?, 34)
    });
}

#[test]
fn conv2d_grads() {
    let inputs = [randn(&[1, 2, 5, 5], 40), randn(&[3, 2, 3, 3], 41), randn(&[3], 42)];
    assert_grad("conv2d 3x3", &inputs, 1e-5, |_, v| {
        weighted_sum(v[0].conv2d(v[1], Some(v[2]), 1, 1)?, 43)
    });
    let inputs = [randn(&[2, 4, 3, 3], 44), randn(&[2, 4, 1, 1], 45)];
    assert_grad("conv2d 1x1", &inputs, 1e-5, |_, v| weighted_sum(v[0].conv2d(v[1], None, 1, 0)?, 46));
}

#[test]
fn unfold_grads() {
    assert_grad("unfold", &[randn(&[2, 2, 8, 8], 50)], 1e-6, |_, v| {
        weighted_sum(v[0].unfold(Window::new(3, 2, 1))?, 51)
    });
    assert_grad("unfold 7/4/2", &[randn(&[1, 3, 16, 16], 52)], 1e-6, |_, v| {
        weighted_sum(v[0].unfold(Window::new(7, 4, 2))?, 53)
    });
}

#[test]
fn upsample_grads() {
    assert_grad("upsample", &[randn(&[1, 2, 3, 4], 60)], 1e-6, |_, v| {
        weighted_sum(v[0].upsample_bilinear(7, 9)?, 61)
    });
}

#[test]
fn elementwise_grads() {
    let pair = [randn(&[3, 4], 70), randn(&[3, 4], 71)];
    assert_grad("add", &pair, 1e-6, |_, v| weighted_sum(v[0].add(v[1])?, 72));
    assert_grad("sub", &pair, 1e-6, |_, v| weighted_sum(v[0].sub(v[1])?, 72));
    assert_grad("mul", &pair, 1e-6, |_, v| weighted_sum(v[0].mul(v[1])?, 73));
    let bias = [randn(&[2, 3, 4], 74), randn(&[4], 75)];
    assert_grad("broadcast add", &bias, 1e-6, |_, v| weighted_sum(v[0].add(v[1])?, 76));
    assert_grad("broadcast mul", &bias, 1e-6, |_, v| weighted_sum(v[0].mul(v[1])?, 77));

    let x = [randn(&[4, 5], 78)];
    assert_grad("scale", &x, 1e-6, |_, v| weighted_sum(v[0].scale(-2.5), 79));
    assert_grad("relu", &x, 1e-6, |_, v| weighted_sum(v[0].relu(), 80));
    assert_grad("sigmoid", &x, 1e-6, |_, v| weighted_sum(v[0].sigmoid(), 81));
    assert_grad("gelu", &x, 1e-6, |_, v| weighted_sum(v[0].gelu(), 82));
    assert_grad("abs", &x, 1e-6, |_, v| weighted_sum(v[0].abs(), 83));
    assert_grad("exp", &x, 1e-6, |_, v| weighted_sum(v[0].exp(), 84));
    let positive = [Tensor::rand_uniform(&[4, 5], 0.2, 2.0, &mut rng(85))];
    assert_grad("ln", &positive, 1e-6, |_, v| weighted_sum(v[0].ln(), 86));
    assert_grad("mean", &x, 1e-6, |_, v| Ok(v[0].mean()));
}

#[test]
fn layout_grads() {
    let x = [randn(&[2, 3, 4], 90)];
    assert_grad("reshape", &x, 1e-6, |_, v| weighted_sum(v[0].reshape(&[6, 4])?, 91));
    assert_grad("permute", &x, 1e-6, |_, v| weighted_sum(v[0].permute(&[2, 0, 1])?, 92));
    assert_grad("transpose", &x, 1e-6, |_, v| weighted_sum(v[0].transpose(1, 2)?, 93));
    assert_grad("slice", &x, 1e-6, |_, v| weighted_sum(v[0].slice(1, 1, 3)?, 94));
    assert_grad("mean_axis", &x, 1e-6, |_, v| weighted_sum(v[0].mean_axis(1)?, 95));
    assert_grad("max_axis", &x, 1e-6, |_, v| weighted_sum(v[0].max_axis(1)?, 96));
    let parts = [randn(&[2, 3, 4], 97), randn(&[2, 1, 4], 98)];
    assert_grad("concat", &parts, 1e-6, |_, v| weighted_sum(Var::concat(v, 1)?, 99));
    let unit = [randn(&[2, 1, 4], 100)];
    assert_grad("expand_axis", &unit, 1e-6, |_, v| weighted_sum(v[0].expand_axis(1, 3)?, 101));
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let tape = Tape::new();
        let a = tape.leaf(randn(&[3, 8], 110));
        let b = tape.leaf(randn(&[8, 8], 111));
        let y = a.matmul(b).unwrap().softmax(1).unwrap();
        let loss = weighted_sum(y, 112).unwrap();
        let grads = tape.backward(loss).unwrap();
        (grads.get(a).unwrap().clone(), grads.get(b).unwrap().clone())
    };
    assert_eq!(run(), run());
}

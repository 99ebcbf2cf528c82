//! Central finite-difference comparison against reverse-mode gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// Gradients smaller than this are compared in absolute terms.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Probes `probes` random elements across `inputs`, comparing the reverse-mode
/// gradient of the scalar `f` with `(f(x+h) - f(x-h)) / 2h`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    probes: usize,
    step: f64,
    rng: &mut impl Rng,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let total: usize = inputs.iter().map(Tensor::numel).sum();
    if total == 0 {
        return Err(Error::Usage("gradient check needs at least one input element".into()));
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .map(|&v| grads.get(v).cloned().expect("leaf gradient"))
            .collect()
    };
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut perturbed = inputs.to_vec();
    let mut report = Vec::with_capacity(probes);
    for _ in 0..probes {
        let mut flat = rng.gen_range(0..total);
        let mut input = 0;
        while flat >= inputs[input].numel() {
            flat -= inputs[input].numel();
            input += 1;
        }
        let original = inputs[input].data()[flat];
        perturbed[input].data_mut()[flat] = original + step;
        let plus = eval(&perturbed)?;
        perturbed[input].data_mut()[flat] = original - step;
        let minus = eval(&perturbed)?;
        perturbed[input].data_mut()[flat] = original;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[input].data()[flat];
        report.push(Probe {
            input,
            element: flat,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    Ok(GradCheckReport { probes: report })
}

/// Reduces an arbitrary output to a scalar with fixed pseudo-random weights so
/// every output element contributes a distinct, order-one sensitivity.
pub fn weighted_sum<'t>(out: Var<'t>, seed: u64) -> Result<Var<'t>> {
    use rand::SeedableRng;
    let shape = out.shape();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let weights = Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng);
    Ok(out.mul(out.tape().constant(weights))?.sum())
}

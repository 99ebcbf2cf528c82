//! Deeply supervised saliency objective plus the depth-quality classification term.

use crate::autodiff::Var;
use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

/// Names of the seven supervised maps, in order.
pub const MAP_NAMES: [&str; 7] = ["t_rgb", "t_depth", "t_rgbd", "side1", "side2", "side3", "final"];

/// Mean binary cross-entropy in nats, predictions clamped to `[ε, 1−ε]`.
pub fn cross_entropy<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("cross_entropy", &pred.shape(), &target.shape()));
    }
    let p = pred.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let pos = target.mul(p.ln())?;
    let neg = target.scale(-1.0).add_scalar(1.0).mul(p.scale(-1.0).add_scalar(1.0).ln())?;
    Ok(pos.add(neg)?.mean().scale(-1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub terms: [f64; 7],
    pub weights: [f64; 7],
    pub classification: f64,
    pub total: f64,
}

impl LossReport {
    /// First non-finite term, by name.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        self.terms
            .iter()
            .zip(MAP_NAMES)
            .find(|(v, _)| !v.is_finite())
            .map(|(_, n)| n)
            .or((!self.classification.is_finite()).then_some("classification"))
            .or((!self.total.is_finite()).then_some("total"))
    }
}

/// `Σ λ_i BCE(map_i, gt) + BCE(sigmoid(logit), label)`. Without labels the
/// classification term is zero.
pub fn total_loss<'t>(
    maps: &[Var<'t>; 7],
    gt: Var<'t>,
    class_logit: Var<'t>,
    labels: Option<Var<'t>>,
    weights: &[f64; 7],
) -> Result<(Var<'t>, LossReport)> {
    let mut terms = [0.0; 7];
    let mut total: Option<Var<'t>> = None;
    for (i, (&map, &w)) in maps.iter().zip(weights).enumerate() {
        let term = cross_entropy(map, gt)?;
        terms[i] = term.value().item();
        let weighted = term.scale(w);
        total = Some(match total {
            Some(t) => t.add(weighted)?,
            None => weighted,
        });
    }
    let mut total = total.expect("seven terms");
    let mut classification = 0.0;
    if let Some(labels) = labels {
        let lc = cross_entropy(class_logit.sigmoid(), labels)?;
        classification = lc.value().item();
        total = total.add(lc)?;
    }
    let report = LossReport {
        terms,
        weights: *weights,
        classification,
        total: total.value().item(),
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn binary(shape: &[usize], seed: u64) -> Tensor {
        Tensor::rand_uniform(shape, 0.0, 1.0, &mut rng(seed)).map(|v| if v > 0.5 { 1.0 } else { 0.0 })
    }

    #[test]
    fn perfect_and_uninformative_predictions() {
        let tape = Tape::new();
        let g = tape.constant(binary(&[1, 1, 4, 4], 1));
        let perfect = cross_entropy(g, g).unwrap().value().item();
        assert!(perfect <= -(1.0 - PROB_EPS).ln() + 1e-15);
        let half = cross_entropy(tape.constant(Tensor::full(&[1, 1, 4, 4], 0.5)), g).unwrap();
        assert!((half.value().item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn matches_pixel_loop() {
        let s = Tensor::rand_uniform(&[4, 4], 0.0, 1.0, &mut rng(2));
        let g = binary(&[4, 4], 3);
        let tape = Tape::new();
        let loss = cross_entropy(tape.constant(s.clone()), tape.constant(g.clone())).unwrap().value().item();
        let mut sum = 0.0;
        for i in 0..16 {
            let p = s.data()[i].clamp(PROB_EPS, 1.0 - PROB_EPS);
            let t = g.data()[i];
            sum += t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        assert!((loss + sum / 16.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_points_toward_target() {
        let tape = Tape::new();
        let g = tape.constant(Tensor::new(&[4], vec![0.0, 1.0, 0.0, 1.0]).unwrap());
        let s = tape.leaf(Tensor::new(&[4], vec![0.3, 0.3, 0.8, 0.8]).unwrap());
        let grads = tape.backward(cross_entropy(s, g).unwrap()).unwrap();
        let d = grads.get(s).unwrap().data().to_vec();
        assert!(d[0] > 0.0 && d[1] < 0.0 && d[2] > 0.0 && d[3] < 0.0);
    }

    fn setup<'t>(tape: &'t Tape) -> ([Var<'t>; 7], Var<'t>, Var<'t>, Var<'t>) {
        let maps = std::array::from_fn(|i| tape.constant(Tensor::rand_uniform(&[2, 1, 4, 4], 0.0, 1.0, &mut rng(10 + i as u64))));
        let gt = tape.constant(binary(&[2, 1, 4, 4], 20));
        let logit = tape.constant(Tensor::new(&[2], vec![0.7, -1.2]).unwrap());
        let labels = tape.constant(Tensor::new(&[2], vec![1.0, 1.0]).unwrap());
        (maps, gt, logit, labels)
    }

    #[test]
    fn total_recomposes_from_terms() {
        let tape = Tape::new();
        let (maps, gt, logit, labels) = setup(&tape);
        let weights = [1.0, 0.5, 2.0, 1.0, 0.25, 1.0, 3.0];
        let (_, r) = total_loss(&maps, gt, logit, Some(labels), &weights).unwrap();
        let mut expect = 0.0;
        for (i, m) in maps.iter().enumerate() {
            expect += weights[i] * cross_entropy(*m, gt).unwrap().value().item();
        }
        let lc = cross_entropy(logit.sigmoid(), labels).unwrap().value().item();
        expect += lc;
        assert!((r.total - expect).abs() < 1e-12);
        assert!(r.terms.iter().all(|t| *t >= 0.0) && r.classification == lc);
    }

    #[test]
    fn zero_weights_leave_classification() {
        let tape = Tape::new();
        let (maps, gt, logit, labels) = setup(&tape);
        let (_, r) = total_loss(&maps, gt, logit, Some(labels), &[0.0; 7]).unwrap();
        assert_eq!(r.total, r.classification);
    }

    #[test]
    fn identical_maps_add_up() {
        let tape = Tape::new();
        let (maps, gt, logit, labels) = setup(&tape);
        let same = [maps[0]; 7];
        let (_, r) = total_loss(&same, gt, logit, Some(labels), &[1.0; 7]).unwrap();
        assert!((r.total - (7.0 * r.terms[0] + r.classification)).abs() < 1e-12);
    }
}

//! Gated inference and depth-quality labelling.

use crate::autodiff::{sigmoid, Tape};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{FusionMode, FusionPolicy, SiaTrans};
use crate::nn::{ParamStore, Session};
use crate::quality::{label_for_mae, mae_between_maps, GateRecord, QualityRecord};
use crate::tensor::Tensor;

/// Maps are `(1, S, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub final_map: Tensor,
    pub t_rgb: Tensor,
    pub t_depth: Tensor,
    pub t_rgbd: Tensor,
    /// Probability that the depth map is usable.
    pub class_prob: f64,
    pub mode: FusionMode,
}

impl PairPrediction {
    /// Record line for this prediction: the depth-vs-RGB-D error and label,
    /// plus the gate inputs and decision.
    pub fn record(&self, id: &str) -> Result<QualityRecord> {
        let mae = mae_between_maps(&self.t_depth, &self.t_rgbd)?;
        Ok(QualityRecord {
            id: id.to_string(),
            mae,
            label: label_for_mae(mae),
            inference: Some(GateRecord {
                probability: self.class_prob,
                mae_rgb_depth: mae_between_maps(&self.t_rgb, &self.t_depth)?,
                decision: self.mode,
            }),
        })
    }
}

/// Eval-mode forward over a `(B, 3, S, S)` batch; one prediction per row.
pub fn predict(
    model: &SiaTrans,
    store: &ParamStore,
    rgb: &Tensor,
    depth: &Tensor,
    policy: FusionPolicy,
) -> Result<Vec<PairPrediction>> {
    let tape = Tape::new();
    let s = Session::inference(&tape, store);
    let p = model.forward(&s, s.input(rgb.clone()), s.input(depth.clone()), policy)?;
    let size = model.cfg.image_size();
    let row = |v: &crate::autodiff::Var<'_>, i: usize| v.value().narrow_rows(i, i + 1)?.reshaped(&[1, size, size]);
    let logits = p.class_logit.value();
    let out = (0..rgb.shape()[0])
        .map(|i| {
            let pred = PairPrediction {
                final_map: row(&p.final_map, i)?,
                t_rgb: row(&p.t_rgb, i)?,
                t_depth: row(&p.t_depth, i)?,
                t_rgbd: row(&p.t_rgbd, i)?,
                class_prob: sigmoid(logits.data()[i]),
                mode: p.modes[i],
            };
            if !pred.final_map.all_finite() {
                return Err(Error::Numeric {
                    context: "inference".into(),
                    detail: format!("non-finite saliency map for row {i}"),
                });
            }
            Ok(pred)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out)
}

/// Predictions for samples in chunks of `batch`, in order.
pub fn predict_samples(
    model: &SiaTrans,
    store: &ParamStore,
    samples: &[Sample],
    batch: usize,
    policy: FusionPolicy,
) -> Result<Vec<PairPrediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let stack = |f: &dyn Fn(&Sample) -> &Tensor| {
            let parts = chunk
                .iter()
                .map(|s| {
                    let t = f(s);
                    t.reshaped(&[1, t.shape()[0], t.shape()[1], t.shape()[2]])
                })
                .collect::<Result<Vec<_>>>()?;
            Tensor::cat_rows(&parts)
        };
        out.extend(predict(model, store, &stack(&|s| &s.rgb)?, &stack(&|s| &s.depth)?, policy)?);
    }
    Ok(out)
}

/// Mean absolute error of final maps against the samples' ground truth.
pub fn mean_mae(predictions: &[PairPrediction], samples: &[Sample]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != samples.len() {
        return Err(Error::Data(format!("{} predictions for {} samples", predictions.len(), samples.len())));
    }
    let mut total = 0.0;
    for (p, s) in predictions.iter().zip(samples) {
        total += mae_between_maps(&p.final_map, &s.gt)?;
    }
    Ok(total / samples.len() as f64)
}

/// Quality labels from a baseline model: the depth-only rough map against
/// the fused rough map of the same forward pass.
pub fn label_samples(model: &SiaTrans, store: &ParamStore, samples: &[Sample], batch: usize) -> Result<Vec<QualityRecord>> {
    let preds = predict_samples(model, store, samples, batch, FusionPolicy::Cross)?;
    let depth: Vec<(String, Tensor)> = samples.iter().zip(&preds).map(|(s, p)| (s.id.clone(), p.t_depth.clone())).collect();
    let rgbd: Vec<(String, Tensor)> = samples.iter().zip(&preds).map(|(s, p)| (s.id.clone(), p.t_rgbd.clone())).collect();
    crate::quality::produce_labels(&depth, &rgbd)
}

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{e_curve, f_measure, mae, max_f_measure, pr_curve, s_measure, threshold, MapPair, PrCurve, THRESHOLDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub id: String,
    pub mae: f64,
    pub max_f: f64,
    pub f_threshold: f64,
    pub s_measure: f64,
    pub max_e: f64,
    #[serde(skip)]
    pub curve: PrCurve,
    #[serde(skip)]
    pub e_curve: Vec<f64>,
}

impl ImageMetrics {
    pub fn compute(id: impl Into<String>, pair: MapPair<'_>) -> Self {
        let curve = pr_curve(pair);
        let (max_f, at) = max_f_measure(&curve);
        let e = e_curve(pair);
        Self {
            id: id.into(),
            mae: mae(pair),
            max_f,
            f_threshold: threshold(at),
            s_measure: s_measure(pair),
            max_e: e.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            curve,
            e_curve: e,
        }
    }
}

/// Dataset figures: MAE and S averaged per image; max-F from the mean
/// precision and recall curves; max-E from the mean E curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub images: usize,
    pub mae: f64,
    pub max_f: f64,
    pub f_threshold: f64,
    pub s_measure: f64,
    pub max_e: f64,
    #[serde(skip)]
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub images: Vec<ImageMetrics>,
    pub summary: DatasetSummary,
}

/// Evaluates named pairs in order.
pub fn evaluate_pairs<'a>(pairs: impl IntoIterator<Item = (String, MapPair<'a>)>) -> Result<EvalResult> {
    let images: Vec<ImageMetrics> = pairs.into_iter().map(|(id, p)| ImageMetrics::compute(id, p)).collect();
    EvalResult::from_images(images)
}

impl EvalResult {
    pub fn from_images(images: Vec<ImageMetrics>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data("no images to evaluate".into()));
        }
        let n = images.len() as f64;
        let avg = |f: &dyn Fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
        let curve = PrCurve {
            precision: (0..THRESHOLDS).map(|i| avg(&|m| m.curve.precision[i])).collect(),
            recall: (0..THRESHOLDS).map(|i| avg(&|m| m.curve.recall[i])).collect(),
        };
        let (max_f, at) = max_f_measure(&curve);
        let max_e = (0..THRESHOLDS).map(|i| avg(&|m| m.e_curve[i])).fold(f64::NEG_INFINITY, f64::max);
        let summary = DatasetSummary {
            images: images.len(),
            mae: avg(&|m| m.mae),
            max_f,
            f_threshold: threshold(at),
            s_measure: avg(&|m| m.s_measure),
            max_e,
            curve,
        };
        debug_assert!((f_measure(summary.curve.precision[at], summary.curve.recall[at]) - max_f).abs() < 1e-15);
        Ok(Self { images, summary })
    }

    /// Per-image table followed by an `ALL` row with the dataset figures.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,mae,max_f,f_threshold,s_measure,max_e\n");
        for m in &self.images {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.id, m.mae, m.max_f, m.f_threshold, m.s_measure, m.max_e
            );
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "ALL,{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.mae, s.max_f, s.f_threshold, s.s_measure, s.max_e
        );
        out
    }

    /// `precision recall` per threshold, lowest threshold first.
    pub fn pr_text(&self) -> String {
        let c = &self.summary.curve;
        let mut out = String::new();
        for (p, r) in c.precision.iter().zip(&c.recall) {
            let _ = writeln!(out, "{p:.6} {r:.6}");
        }
        out
    }

    /// Writes `<name>.csv` and `<name>_pr.txt` into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, text) in [(format!("{name}.csv"), self.to_csv()), (format!("{name}_pr.txt"), self.pr_text())] {
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

//! Saliency evaluation: MAE, precision-recall curves, max F-measure,
//! S-measure and max E-measure over a 256-level threshold grid.
//!
//! Maps are flat row-major slices with explicit height and width; predictions
//! lie in `[0, 1]` and ground truth is exactly 0 or 1.

mod report;

pub use report::{evaluate_pairs, DatasetSummary, EvalResult, ImageMetrics};

use crate::error::{Error, Result};

pub const THRESHOLDS: usize = 256;
pub const BETA_SQ: f64 = 0.3;
pub const S_GAMMA: f64 = 0.5;
pub const E_EPS: f64 = 1e-8;
/// Guard used inside the structural similarity terms (double-precision epsilon).
const S_EPS: f64 = f64::EPSILON;

/// Threshold `i` of the grid, `i / 255`.
pub fn threshold(i: usize) -> f64 {
    i as f64 / (THRESHOLDS - 1) as f64
}

/// A prediction and its ground truth, `h × w`, row-major.
#[derive(Debug, Clone, Copy)]
pub struct MapPair<'a> {
    pub pred: &'a [f64],
    pub gt: &'a [f64],
    pub height: usize,
    pub width: usize,
}

impl<'a> MapPair<'a> {
    pub fn new(pred: &'a [f64], gt: &'a [f64], height: usize, width: usize) -> Result<Self> {
        let n = height * width;
        if pred.len() != n || gt.len() != n || n == 0 {
            return Err(Error::dim("metrics", &[pred.len()], &[gt.len(), height, width]));
        }
        if gt.iter().any(|&g| g != 0.0 && g != 1.0) {
            return Err(Error::Data("ground truth must be binary".into()));
        }
        if pred.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("prediction values must lie in [0, 1]".into()));
        }
        Ok(Self {
            pred,
            gt,
            height,
            width,
        })
    }

    fn len(&self) -> usize {
        self.pred.len()
    }
}

pub fn mae(pair: MapPair<'_>) -> f64 {
    let sum: f64 = pair.pred.iter().zip(pair.gt).map(|(p, g)| (p - g).abs()).sum();
    sum / pair.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Precision and recall of `pred ≥ t` for every grid threshold. Precision is
/// 1 with no predicted positives; recall is 1 with an empty ground truth.
pub fn pr_curve(pair: MapPair<'_>) -> PrCurve {
    // Count predictions per 8-bit bin, then accumulate from the top so that
    // bin i holds the positives for threshold i.
    let mut fg_hist = [0usize; THRESHOLDS];
    let mut bg_hist = [0usize; THRESHOLDS];
    for (&p, &g) in pair.pred.iter().zip(pair.gt) {
        let bin = bin_of(p);
        if g == 1.0 {
            fg_hist[bin] += 1;
        } else {
            bg_hist[bin] += 1;
        }
    }
    let positives: usize = fg_hist.iter().sum();
    let mut precision = vec![0.0; THRESHOLDS];
    let mut recall = vec![0.0; THRESHOLDS];
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in (0..THRESHOLDS).rev() {
        tp += fg_hist[i];
        fp += bg_hist[i];
        precision[i] = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        recall[i] = if positives == 0 { 1.0 } else { tp as f64 / positives as f64 };
    }
    PrCurve { precision, recall }
}

/// Largest grid index `i` with `p ≥ i/255`.
fn bin_of(p: f64) -> usize {
    let mut i = ((p * 255.0).floor() as usize).min(THRESHOLDS - 1);
    // guard against rounding in either direction
    while i + 1 < THRESHOLDS && p >= threshold(i + 1) {
        i += 1;
    }
    while i > 0 && p < threshold(i) {
        i -= 1;
    }
    i
}

/// Weighted harmonic mean of precision and recall, 0 when both vanish.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    let denom = BETA_SQ * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + BETA_SQ) * precision * recall / denom
    }
}

/// Maximum F over the curve and the threshold index where it occurs (first on ties).
pub fn max_f_measure(curve: &PrCurve) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (&p, &r)) in curve.precision.iter().zip(&curve.recall).enumerate() {
        let f = f_measure(p, r);
        if f > best.0 {
            best = (f, i);
        }
    }
    best
}

fn mean(v: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut s, mut n) = (0.0, 0);
    for x in v {
        s += x;
        n += 1;
    }
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// Structure measure: `γ·S_object + (1−γ)·S_region`.
pub fn s_measure(pair: MapPair<'_>) -> f64 {
    let (fg_ratio, _) = mean(pair.gt.iter().copied());
    if fg_ratio == 0.0 {
        return 1.0 - mean(pair.pred.iter().copied()).0;
    }
    if fg_ratio == 1.0 {
        return mean(pair.pred.iter().copied()).0;
    }
    let q = S_GAMMA * s_object(pair, fg_ratio) + (1.0 - S_GAMMA) * s_region(pair);
    q.max(0.0)
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (m, n) = mean(values.clone());
    let sd = if n > 1 {
        (values.map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * m / (m * m + 1.0 + sd + S_EPS)
}

fn s_object(pair: MapPair<'_>, fg_ratio: f64) -> f64 {
    let cells = pair.pred.iter().zip(pair.gt);
    let fg = object_score(cells.clone().filter(|(_, &g)| g == 1.0).map(|(&p, _)| p));
    let bg = object_score(cells.filter(|(_, &g)| g == 0.0).map(|(&p, _)| 1.0 - p));
    fg_ratio * fg + (1.0 - fg_ratio) * bg
}

/// Rounded foreground centroid as counts of leading columns and rows.
fn centroid(pair: MapPair<'_>) -> (usize, usize) {
    let (h, w) = (pair.height, pair.width);
    let total: f64 = pair.gt.iter().sum();
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let g = pair.gt[r * w + c];
            sx += g * (c + 1) as f64;
            sy += g * (r + 1) as f64;
        }
    }
    ((sx / total).round() as usize, (sy / total).round() as usize)
}

fn s_region(pair: MapPair<'_>) -> f64 {
    let (h, w) = (pair.height, pair.width);
    let (x, y) = centroid(pair);
    let area = (h * w) as f64;
    let blocks = [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)];
    blocks
        .iter()
        .map(|&(r0, r1, c0, c1)| {
            let n = (r1 - r0) * (c1 - c0);
            if n == 0 {
                return 0.0;
            }
            let cells = (r0..r1).flat_map(move |r| (c0..c1).map(move |c| r * w + c));
            n as f64 / area * block_ssim(pair, cells, n)
        })
        .sum()
}

fn block_ssim(pair: MapPair<'_>, cells: impl Iterator<Item = usize> + Clone, n: usize) -> f64 {
    let (mx, _) = mean(cells.clone().map(|i| pair.pred[i]));
    let (my, _) = mean(cells.clone().map(|i| pair.gt[i]));
    let denom = (n as f64 - 1.0) + S_EPS;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for i in cells {
        let (dx, dy) = (pair.pred[i] - mx, pair.gt[i] - my);
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
    }
    let (vx, vy, cxy) = (vx / denom, vy / denom, cxy / denom);
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + S_EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Enhanced-alignment score of a binary prediction against the ground truth.
pub fn e_measure_binary(fm: &[f64], gt: &[f64]) -> f64 {
    let n = gt.len() as f64;
    let (gt_mean, _) = mean(gt.iter().copied());
    let enhanced_sum: f64 = if gt_mean == 0.0 {
        fm.iter().map(|f| 1.0 - f).sum()
    } else if gt_mean == 1.0 {
        fm.iter().sum()
    } else {
        let (fm_mean, _) = mean(fm.iter().copied());
        fm.iter()
            .zip(gt)
            .map(|(f, g)| {
                let (a, b) = (f - fm_mean, g - gt_mean);
                let align = 2.0 * a * b / (a * a + b * b + E_EPS);
                (align + 1.0).powi(2) / 4.0
            })
            .sum()
    };
    enhanced_sum / n
}

/// E-measure at every grid threshold.
pub fn e_curve(pair: MapPair<'_>) -> Vec<f64> {
    let mut fm = vec![0.0; pair.len()];
    (0..THRESHOLDS)
        .map(|i| {
            let t = threshold(i);
            for (f, &p) in fm.iter_mut().zip(pair.pred) {
                *f = if p >= t { 1.0 } else { 0.0 };
            }
            e_measure_binary(&fm, pair.gt)
        })
        .collect()
}

pub fn max_e_measure(pair: MapPair<'_>) -> f64 {
    e_curve(pair).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean of per-image MAE.
pub fn dataset_mae(pairs: &[MapPair<'_>]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("no images to evaluate".into()));
    }
    Ok(pairs.iter().map(|p| mae(*p)).sum::<f64>() / pairs.len() as f64)
}

//! Brute-force reference implementations of the saliency metrics, written
//! against 2-D grids without sharing any code with the library.

use rand::Rng;

pub type Grid = Vec<Vec<f64>>;

pub fn to_flat(g: &Grid) -> Vec<f64> {
    g.iter().flatten().copied().collect()
}

/// Random prediction and mask; a quarter of predictions sit on 8-bit levels
/// so that threshold ties are exercised.
pub fn random_instance(rng: &mut impl Rng, h: usize, w: usize) -> (Grid, Grid) {
    let quantized = rng.gen_bool(0.25);
    let density: f64 = rng.gen_range(0.1..0.9);
    loop {
        let pred: Grid = (0..h)
            .map(|_| {
                (0..w)
                    .map(|_| {
                        if quantized {
                            rng.gen_range(0..=255u32) as f64 / 255.0
                        } else {
                            rng.gen::<f64>()
                        }
                    })
                    .collect()
            })
            .collect();
        let gt: Grid = (0..h)
            .map(|_| (0..w).map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 }).collect())
            .collect();
        let ones: f64 = gt.iter().flatten().sum();
        if ones > 0.0 && ones < (h * w) as f64 {
            return (pred, gt);
        }
    }
}

pub fn mae(pred: &Grid, gt: &Grid) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (pr, gr) in pred.iter().zip(gt) {
        for (p, g) in pr.iter().zip(gr) {
            total += (p - g).abs();
            n += 1;
        }
    }
    total / n as f64
}

/// `(precision, recall)` at each threshold `i/255` by direct counting.
pub fn pr(pred: &Grid, gt: &Grid) -> Vec<(f64, f64)> {
    (0..256)
        .map(|i| {
            let t = i as f64 / 255.0;
            let (mut tp, mut fp, mut fneg) = (0u32, 0u32, 0u32);
            for (pr, gr) in pred.iter().zip(gt) {
                for (&p, &g) in pr.iter().zip(gr) {
                    match (p >= t, g == 1.0) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fneg += 1,
                        _ => {}
                    }
                }
            }
            let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
            (precision, recall)
        })
        .collect()
}

pub fn max_f(pred: &Grid, gt: &Grid) -> f64 {
    let mut best = 0.0f64;
    for (p, r) in pr(pred, gt) {
        let f = if 0.3 * p + r > 0.0 { 1.3 * p * r / (0.3 * p + r) } else { 0.0 };
        best = best.max(f);
    }
    best
}

pub fn max_e(pred: &Grid, gt: &Grid) -> f64 {
    e_curve(pred, gt).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Enhanced-alignment score at each threshold `i/255`.
pub fn e_curve(pred: &Grid, gt: &Grid) -> Vec<f64> {
    let n = (pred.len() * pred[0].len()) as f64;
    let mean = |g: &Grid| g.iter().flatten().sum::<f64>() / n;
    let mu_g = mean(gt);
    let mut curve = Vec::with_capacity(256);
    for i in 0..256 {
        let t = i as f64 / 255.0;
        let bin: Grid = pred.iter().map(|r| r.iter().map(|&p| if p >= t { 1.0 } else { 0.0 }).collect()).collect();
        let mu_f = mean(&bin);
        let mut total = 0.0;
        for (br, gr) in bin.iter().zip(gt) {
            for (&f, &g) in br.iter().zip(gr) {
                let (a, b) = (f - mu_f, g - mu_g);
                let xi = 2.0 * a * b / (a * a + b * b + 1e-8);
                total += (xi + 1.0).powi(2) / 4.0;
            }
        }
        curve.push(total / n);
    }
    curve
}

/// Structure measure for a mask containing both classes.
pub fn s_measure(pred: &Grid, gt: &Grid) -> f64 {
    let eps = f64::EPSILON;
    let (h, w) = (gt.len(), gt[0].len());

    // object-aware term
    let score = |vals: &[f64]| {
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        2.0 * m / (m * m + 1.0 + sd + eps)
    };
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if gt[r][c] == 1.0 {
                fg.push(pred[r][c]);
            } else {
                bg.push(1.0 - pred[r][c]);
            }
        }
    }
    let u = fg.len() as f64 / (h * w) as f64;
    let object = u * score(&fg) + (1.0 - u) * score(&bg);

    // region-aware term: split at the 1-based rounded centroid
    let mut count = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for r in 0..h {
        for c in 0..w {
            if gt[r][c] == 1.0 {
                count += 1.0;
                cx += (c + 1) as f64;
                cy += (r + 1) as f64;
            }
        }
    }
    let x = (cx / count).round() as usize;
    let y = (cy / count).round() as usize;
    let ssim = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                p.push(pred[r][c]);
                g.push(gt[r][c]);
            }
        }
        let n = p.len() as f64;
        let mp = p.iter().sum::<f64>() / n;
        let mg = g.iter().sum::<f64>() / n;
        let mut sp = 0.0;
        let mut sg = 0.0;
        let mut spg = 0.0;
        for k in 0..p.len() {
            sp += (p[k] - mp).powi(2);
            sg += (g[k] - mg).powi(2);
            spg += (p[k] - mp) * (g[k] - mg);
        }
        let d = n - 1.0 + eps;
        let (sp, sg, spg) = (sp / d, sg / d, spg / d);
        let num = 4.0 * mp * mg * spg;
        let den = (mp * mp + mg * mg) * (sp + sg);
        if num != 0.0 {
            num / (den + eps)
        } else if den == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let area = (h * w) as f64;
    let mut region = 0.0;
    for (r0, r1, c0, c1) in [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)] {
        let cells = (r1 - r0) * (c1 - c0);
        if cells > 0 {
            region += cells as f64 / area * ssim(r0, r1, c0, c1);
        }
    }
    (0.5 * object + 0.5 * region).max(0.0)
}

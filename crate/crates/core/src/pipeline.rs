//! File-level drivers behind the command-line tool: training into an output
//! directory, inference on pairs or folders, depth labelling and evaluation
//! of saved maps.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::data::{
    list_stems, load_image, load_map, preprocess_images, save_map, DatasetIndex, Plane, Sample, DEPTH_DIR, LABELS_FILE,
    RGB_DIR,
};
use crate::error::{Error, Result};
use crate::infer::{label_samples, predict, PairPrediction};
use crate::metrics::{evaluate_pairs, EvalResult, MapPair};
use crate::model::{FusionPolicy, SiaTrans};
use crate::quality::{write_records, QualityRecord};
use crate::train::{EpochStats, Trainer};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const RUN_CONFIG_FILE: &str = "run.toml";
pub const LOSS_LOG: &str = "loss.tsv";
pub const RECORDS_FILE: &str = "records.tsv";

pub fn epoch_checkpoint(epoch: usize) -> String {
    format!("epoch_{:04}.ckpt", epoch + 1)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains on the dataset at `data`, writing the effective configuration, a
/// per-epoch loss log, periodic checkpoints and `final.ckpt` into `out`.
pub fn train_dir(run: &RunConfig, data: &Path, out: &Path) -> Result<Vec<EpochStats>> {
    run.validate()?;
    let config_text = run.to_toml()?;
    let cfg = run.model_config()?;
    let index = DatasetIndex::open(data)?;
    let labels = if run.classification_loss {
        let labels = index.label_vector()?.ok_or_else(|| {
            Error::Usage(format!(
                "{}: no {LABELS_FILE}; run label-depth first or set classification_loss = false",
                data.display()
            ))
        })?;
        Some(labels)
    } else {
        None
    };
    let samples = index.load(cfg.image_size())?;
    log::info!("{} training pairs at {}x{}", samples.len(), cfg.image_size(), cfg.image_size());

    create_dir(out)?;
    write(&out.join(RUN_CONFIG_FILE), &config_text)?;
    let mut log = String::from("epoch\tlr\tsteps\ttotal\tt_rgb\tt_depth\tt_rgbd\ts1\ts2\ts3\tfinal\tclass\n");
    let mut trainer = Trainer::new(run)?;
    let every = run.checkpoint_every;
    let history = trainer.fit(&samples, labels.as_deref(), |stats, t| {
        let _ = write!(log, "{}\t{:e}\t{}\t{:.6}", stats.epoch + 1, stats.lr, stats.steps, stats.total);
        for v in stats.terms.iter().chain([&stats.classification]) {
            let _ = write!(log, "\t{v:.6}");
        }
        log.push('\n');
        write(&out.join(LOSS_LOG), &log)?;
        if every > 0 && (stats.epoch + 1) % every == 0 {
            checkpoint::save(&out.join(epoch_checkpoint(stats.epoch)), &cfg, &t.store, stats.epoch as u64 + 1)?;
        }
        Ok(())
    })?;
    let epochs = history.last().map_or(0, |s| s.epoch as u64 + 1);
    checkpoint::save(&out.join(FINAL_CHECKPOINT), &cfg, &trainer.store, epochs)?;
    Ok(history)
}

/// One pair straight from image files. The returned map has the input's resolution.
pub fn infer_files(ckpt: &Checkpoint, rgb: &Path, depth: &Path, policy: FusionPolicy) -> Result<(PairPrediction, Plane)> {
    infer_with(&ckpt.model()?, ckpt, rgb, depth, policy)
}

fn infer_with(model: &SiaTrans, ckpt: &Checkpoint, rgb: &Path, depth: &Path, policy: FusionPolicy) -> Result<(PairPrediction, Plane)> {
    let size = ckpt.config.image_size();
    let rgb = load_image(rgb)?;
    let depth = load_image(depth)?;
    let (h, w) = (rgb.height() as usize, rgb.width() as usize);
    let blank = image::DynamicImage::ImageLuma8(image::GrayImage::new(rgb.width(), rgb.height()));
    let sample = preprocess_images("input", &rgb, &depth, &blank, size)?;
    let pred = predict_one(model, ckpt, &sample, policy)?;
    let full = Plane::new(size, size, pred.final_map.data().to_vec())?.resize_bilinear(h, w);
    Ok((pred, full))
}

fn predict_one(model: &SiaTrans, ckpt: &Checkpoint, s: &Sample, policy: FusionPolicy) -> Result<PairPrediction> {
    let size = ckpt.config.image_size();
    let rgb = s.rgb.reshaped(&[1, 3, size, size])?;
    let depth = s.depth.reshaped(&[1, 3, size, size])?;
    Ok(predict(model, &ckpt.store, &rgb, &depth, policy)?.remove(0))
}

/// Runs every `RGB/<id>.png` + `depth/<id>.png` pair under `data`, writing
/// `<id>.png` maps at input resolution and a record per pair into `out`.
pub fn infer_dir(ckpt: &Checkpoint, data: &Path, out: &Path, policy: FusionPolicy) -> Result<Vec<QualityRecord>> {
    let ids = list_stems(&data.join(RGB_DIR))?;
    if ids.is_empty() {
        return Err(Error::Data(format!("{}: no RGB images", data.join(RGB_DIR).display())));
    }
    create_dir(out)?;
    let model = ckpt.model()?;
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let rgb = data.join(RGB_DIR).join(format!("{id}.png"));
        let depth = data.join(DEPTH_DIR).join(format!("{id}.png"));
        if !depth.is_file() {
            return Err(Error::Data(format!("pair {id}: missing {}", depth.display())));
        }
        let (pred, map) = infer_with(&model, ckpt, &rgb, &depth, policy)?;
        save_map(&out.join(format!("{id}.png")), &map.data, map.height, map.width)?;
        let record = pred.record(&id)?;
        log::info!("{}", record.to_line());
        records.push(record);
    }
    write_records(&out.join(RECORDS_FILE), &records)?;
    Ok(records)
}

/// Depth-quality labels for a dataset from a baseline checkpoint. Written to
/// `out`, or to the dataset's `labels.tsv` when `out` is `None`.
pub fn label_dir(ckpt: &Checkpoint, data: &Path, out: Option<&Path>, batch: usize) -> Result<(PathBuf, Vec<QualityRecord>)> {
    let index = DatasetIndex::open(data)?;
    let samples = index.load(ckpt.config.image_size())?;
    let records = label_samples(&ckpt.model()?, &ckpt.store, &samples, batch)?;
    let path = out.map_or_else(|| data.join(LABELS_FILE), Path::to_path_buf);
    write_records(&path, &records)?;
    Ok((path, records))
}

/// Scores every prediction in `pred` against the same-named map in `gt`.
/// Predictions are resized to the ground truth's resolution when they differ.
/// Any file without a counterpart is an error naming it.
pub fn evaluate_dirs(pred: &Path, gt: &Path) -> Result<EvalResult> {
    let preds: BTreeSet<String> = list_stems(pred)?.into_iter().collect();
    let gts: BTreeSet<String> = list_stems(gt)?.into_iter().collect();
    let only_pred: Vec<&String> = preds.difference(&gts).collect();
    let only_gt: Vec<&String> = gts.difference(&preds).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        return Err(Error::Data(format!(
            "unmatched files: predictions without ground truth {only_pred:?}, ground truth without predictions {only_gt:?}"
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data(format!("{}: no PNG maps", pred.display())));
    }
    let mut maps = Vec::with_capacity(preds.len());
    for id in &preds {
        let g = load_map(&gt.join(format!("{id}.png")))?;
        let mut p = load_map(&pred.join(format!("{id}.png")))?;
        if (p.height, p.width) != (g.height, g.width) {
            p = p.resize_bilinear(g.height, g.width);
        }
        let binary: Vec<f64> = crate::data::binarize(&g.data);
        let clamped: Vec<f64> = p.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        maps.push((id.clone(), clamped, binary, g.height, g.width));
    }
    let pairs = maps
        .iter()
        .map(|(id, p, g, h, w)| MapPair::new(p, g, *h, *w).map(|m| (id.clone(), m)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_names_unmatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let (p, g) = (dir.path().join("pred"), dir.path().join("gt"));
        std::fs::create_dir_all(&p).unwrap();
        std::fs::create_dir_all(&g).unwrap();
        let map = [0.0, 1.0, 1.0, 0.0];
        save_map(&p.join("a.png"), &map, 2, 2).unwrap();
        save_map(&g.join("a.png"), &map, 2, 2).unwrap();
        let r = evaluate_dirs(&p, &g).unwrap();
        assert_eq!(r.summary.mae, 0.0);
        save_map(&p.join("b.png"), &map, 2, 2).unwrap();
        save_map(&g.join("c.png"), &map, 2, 2).unwrap();
        let err = evaluate_dirs(&p, &g).unwrap_err().to_string();
        assert!(err.contains("\"b\"") && err.contains("\"c\""), "{err}");
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let (p, g) = (dir.path().join("pred"), dir.path().join("gt"));
        std::fs::create_dir_all(&p).unwrap();
        std::fs::create_dir_all(&g).unwrap();
        let gt: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        save_map(&g.join("m.png"), &gt, 4, 5).unwrap();
        save_map(&p.join("m.png"), &gt, 4, 5).unwrap();
        let s = evaluate_dirs(&p, &g).unwrap().summary;
        assert_eq!((s.mae, s.max_f), (0.0, 1.0));
        // the E-measure's stabilizing epsilon keeps it a hair below 1
        assert!((s.s_measure - 1.0).abs() < 1e-12 && (s.max_e - 1.0).abs() < 1e-6);

        save_map(&p.join("m.png"), &[0.5; 20], 4, 5).unwrap();
        let half = 128.0 / 255.0;
        let expect = gt.iter().map(|v| (half - v).abs()).sum::<f64>() / 20.0;
        let s = evaluate_dirs(&p, &g).unwrap().summary;
        // maps are decoded through f32
        assert!((s.mae - expect).abs() < 1e-7);
    }

    #[test]
    fn predictions_are_resized_to_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let (p, g) = (dir.path().join("pred"), dir.path().join("gt"));
        std::fs::create_dir_all(&p).unwrap();
        std::fs::create_dir_all(&g).unwrap();
        save_map(&p.join("x.png"), &[1.0; 4], 2, 2).unwrap();
        save_map(&g.join("x.png"), &[1.0; 12], 3, 4).unwrap();
        let r = evaluate_dirs(&p, &g).unwrap();
        assert_eq!(r.images[0].mae, 0.0);
    }
}

//! The whole workflow on synthetic data: train a baseline, label depth
//! quality with it, retrain with the classifier, then run gated inference on
//! held-out pairs and evaluate the saved maps.
//!
//! cargo run --release --example rgbd_pipeline [steps per run]

use siatrans::config::RunConfig;
use siatrans::data::synthetic::{generate, write_dataset, SyntheticConfig};
use siatrans::data::GT_DIR;
use siatrans::checkpoint::Checkpoint;
use siatrans::model::{FusionMode, FusionPolicy};
use siatrans::quality::LABEL_THRESHOLD;
use siatrans::pipeline::{evaluate_dirs, infer_dir, label_dir, train_dir, FINAL_CHECKPOINT};

fn main() -> siatrans::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(80);
    let dir = tempfile::tempdir().map_err(|e| siatrans::Error::Data(e.to_string()))?;
    let (train, test) = (dir.path().join("train"), dir.path().join("test"));
    let data = |pairs, seed| SyntheticConfig {
        poor_depth_fraction: 0.3,
        ..SyntheticConfig::new(pairs, 96, seed)
    };
    write_dataset(&train, &generate(&data(16, 1)))?;
    write_dataset(&test, &generate(&data(6, 2)))?;

    let base = RunConfig {
        epochs: 100_000,
        max_steps: Some(steps),
        classification_loss: false,
        checkpoint_every: 0,
        ..RunConfig::desk()
    };
    let history = train_dir(&base, &train, &dir.path().join("baseline"))?;
    println!("baseline: {} steps, loss {:.3} -> {:.3}", steps, history[0].total, history.last().unwrap().total);

    let baseline = Checkpoint::load(&dir.path().join("baseline").join(FINAL_CHECKPOINT))?;
    let (_, labels) = label_dir(&baseline, &train, None, 8)?;
    let mean_err = labels.iter().map(|r| r.mae).sum::<f64>() / labels.len() as f64;
    println!(
        "labels: {} of {} pairs have usable depth (mean depth vs RGB-D error {mean_err:.3}, threshold {LABEL_THRESHOLD})",
        labels.iter().filter(|r| r.label == 1).count(),
        labels.len()
    );

    let full = RunConfig {
        classification_loss: true,
        ..base
    };
    train_dir(&full, &train, &dir.path().join("full"))?;
    let model = Checkpoint::load(&dir.path().join("full").join(FINAL_CHECKPOINT))?;

    for policy in [FusionPolicy::Cross, FusionPolicy::Gated] {
        let out = dir.path().join(format!("pred_{policy:?}"));
        let records = infer_dir(&model, &test, &out, policy)?;
        let fallbacks = records
            .iter()
            .filter(|r| r.inference.as_ref().is_some_and(|g| g.decision == FusionMode::SelfEnhance))
            .count();
        let s = evaluate_dirs(&out, &test.join(GT_DIR))?.summary;
        println!(
            "{policy:?}: MAE {:.4}  max-F {:.4}  S {:.4}  max-E {:.4}  ({fallbacks} of {} pairs fell back to RGB)",
            s.mae,
            s.max_f,
            s.s_measure,
            s.max_e,
            records.len()
        );
    }
    Ok(())
}

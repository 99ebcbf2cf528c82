//! Overfits eight synthetic RGB-D pairs at 64×64 with the desk model, once
//! with adaptive fusion and once without, and reports loss and train MAE.
//!
//! cargo run --release --example toy_training [steps]

use std::time::Instant;

use siatrans::config::RunConfig;
use siatrans::data::synthetic::{generate, SyntheticConfig};
use siatrans::data::Sample;
use siatrans::infer::{mean_mae, predict_samples};
use siatrans::model::FusionPolicy;
use siatrans::train::Trainer;

fn main() -> siatrans::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let pairs = generate(&SyntheticConfig::new(8, 64, 11));
    let samples: Vec<Sample> = pairs.iter().map(|p| p.sample(64)).collect::<Result<_, _>>()?;

    for adaptive_fusion in [true, false] {
        let run = RunConfig {
            epochs: 100_000,
            max_steps: Some(steps),
            adaptive_fusion,
            classification_loss: false,
            seed: 1,
            ..RunConfig::desk()
        };
        let start = Instant::now();
        let mut trainer = Trainer::new(&run)?;
        let history = trainer.fit(&samples, None, |_, _| Ok(()))?;
        let preds = predict_samples(&trainer.model, &trainer.store, &samples, 8, FusionPolicy::Cross)?;
        let (first, last) = (&history[0], history.last().unwrap());
        println!(
            "adaptive fusion {adaptive_fusion:<5}  loss {:.4} -> {:.4} ({:.1}%)  train MAE {:.4}  {:.1}s",
            first.total,
            last.total,
            100.0 * last.total / first.total,
            mean_mae(&preds, &samples)?,
            start.elapsed().as_secs_f64()
        );
        for e in history.iter().step_by(10) {
            println!("  epoch {:>3}  {:.4}  {:?}", e.epoch + 1, e.total, e.terms.map(|t| (t * 1000.0).round() / 1000.0));
        }
    }
    Ok(())
}

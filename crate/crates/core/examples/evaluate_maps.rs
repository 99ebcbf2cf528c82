//! Scores progressively degraded predictions of synthetic masks with MAE,
//! max F-measure, S-measure and max E-measure, reading and writing PNGs the
//! way the `eval` command does.
//!
//! cargo run --release --example evaluate_maps

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use siatrans::data::synthetic::{generate, SyntheticConfig};
use siatrans::data::{save_map, Plane};
use siatrans::pipeline::evaluate_dirs;

fn main() -> siatrans::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| siatrans::Error::Data(e.to_string()))?;
    let size = 96;
    let pairs = generate(&SyntheticConfig::new(10, size as u32, 21));
    let gt_dir = dir.path().join("GT");
    std::fs::create_dir_all(&gt_dir).map_err(|e| siatrans::Error::Data(e.to_string()))?;
    for p in &pairs {
        let gt: Vec<f64> = p.gt.pixels().map(|px| f64::from(px.0[0]) / 255.0).collect();
        save_map(&gt_dir.join(format!("{}.png", p.id)), &gt, size, size)?;
    }

    println!("{:<22} {:>7} {:>7} {:>7} {:>7}", "prediction", "MAE", "max-F", "S", "max-E");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (label, blur, noise) in [("exact", 1, 0.0), ("blurred", 9, 0.0), ("blurred + noise", 9, 0.25), ("heavy", 25, 0.5)] {
        let pred_dir = dir.path().join(label.replace(' ', "_"));
        std::fs::create_dir_all(&pred_dir).map_err(|e| siatrans::Error::Data(e.to_string()))?;
        for p in &pairs {
            let gt = Plane::new(size, size, p.gt.pixels().map(|px| f64::from(px.0[0]) / 255.0).collect())?;
            // box blur by down- and up-sampling, then additive noise
            let small = size / blur;
            let soft = gt.resize_bilinear(small, small).resize_bilinear(size, size);
            let map: Vec<f64> = soft.data.iter().map(|v| (v + rng.gen_range(-noise..=noise)).clamp(0.0, 1.0)).collect();
            save_map(&pred_dir.join(format!("{}.png", p.id)), &map, size, size)?;
        }
        let s = evaluate_dirs(&pred_dir, &gt_dir)?.summary;
        println!("{label:<22} {:>7.4} {:>7.4} {:>7.4} {:>7.4}", s.mae, s.max_f, s.s_measure, s.max_e);
    }
    Ok(())
}

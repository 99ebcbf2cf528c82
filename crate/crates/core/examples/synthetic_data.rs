//! Writes a synthetic RGB-D dataset (8-bit RGB, 16-bit depth in millimetres,
//! binary masks) in the layout the command-line tool reads.
//!
//! cargo run --release --example synthetic_data -- <dir> [pairs] [size] [poor depth fraction]

use std::path::PathBuf;

use siatrans::data::synthetic::{generate, write_dataset, SyntheticConfig};

fn main() -> siatrans::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(root) = args.first().map(PathBuf::from) else {
        eprintln!("usage: synthetic_data <dir> [pairs] [size] [poor depth fraction]");
        std::process::exit(1);
    };
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let cfg = SyntheticConfig {
        poor_depth_fraction: arg(3, 0.25),
        ..SyntheticConfig::new(arg(1, 16.0) as usize, arg(2, 128.0) as u32, 7)
    };
    let pairs = generate(&cfg);
    write_dataset(&root, &pairs)?;
    let poor = pairs.iter().filter(|p| p.poor_depth).count();
    println!("{} pairs at {2}x{2} in {}, {poor} with uninformative depth", pairs.len(), root.display(), cfg.size);
    Ok(())
}

//! Finite-difference check of every differentiable op in f64, then one probe
//! of the full training loss through a small network.
//!
//! cargo run --release --example gradient_check [seed]

use std::time::Instant;

use siatrans::gradient_suite::{end_to_end_probe, op_suite};

fn main() -> siatrans::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = Instant::now();
    let mut results = op_suite(seed)?;
    results.push(end_to_end_probe(seed)?);
    for r in &results {
        println!(
            "{:<28} {:>3} probes  max rel err {:.2e}  (< {:.0e})  {}",
            r.name,
            r.probes,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed, {:.1}s", results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(3);
    }
    Ok(())
}

//! Parameter and MAC counts of the full configuration and the desk configuration.
//!
//!     cargo run --release --example count_cost

use siatrans::cost::count_cost;
use siatrans::model::ModelConfig;

fn main() {
    let full = count_cost(&ModelConfig::full());
    println!("{full}");
    println!("{}", count_cost(&ModelConfig::desk()));

    let mut two_stream = ModelConfig::full();
    two_stream.encoder.siamese = false;
    let split = count_cost(&two_stream);
    println!(
        "two-stream encoder: {:.2} M params ({:.0}% more than shared)",
        split.total.params as f64 / 1e6,
        100.0 * (split.total.params as f64 / full.total.params as f64 - 1.0)
    );
}

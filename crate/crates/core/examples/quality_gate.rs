//! Depth-quality labelling thresholds and the inference-time gate, on
//! hand-picked inputs.
//!
//! cargo run --example quality_gate

use siatrans::quality::{gate_decision, label_for_mae, QualityRecord, CLASS_THRESHOLD, GATE_THRESHOLD, LABEL_THRESHOLD};

fn main() {
    println!("labels: depth-only vs RGB-D rough map error, threshold {LABEL_THRESHOLD}");
    for mae in [0.001, 0.019, 0.020, 0.021, 0.4] {
        println!("  mae {mae:<6} -> label {}", label_for_mae(mae));
    }

    println!("gate: classifier threshold {CLASS_THRESHOLD}, RGB vs depth map threshold {GATE_THRESHOLD}");
    for (p, mae) in [(0.9, 0.001), (0.9, 0.3), (0.1, 0.001), (0.1, 0.3), (0.5, 0.3), (0.1, 0.015)] {
        println!("  p {p:<4} mae {mae:<6} -> {}", gate_decision(p, mae));
    }

    let record = QualityRecord::labelled("pair_0001", 0.0314);
    println!("record line: {:?}", record.to_line());
}

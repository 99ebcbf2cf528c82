//! Depth-quality labels and the inference-time fusion gate.
//!
//! A depth map is labelled poor (0) when the depth-only rough prediction of a
//! baseline model strays from its RGB-D prediction by more than
//! [`LABEL_THRESHOLD`] mean absolute error. At inference the fusion stage falls
//! back to RGB self-enhancement when the classifier calls the depth poor and
//! the RGB and depth rough maps disagree by more than [`GATE_THRESHOLD`].

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::FusionMode;
use crate::tensor::Tensor;

pub const LABEL_THRESHOLD: f64 = 0.020;
pub const GATE_THRESHOLD: f64 = 0.015;
pub const CLASS_THRESHOLD: f64 = 0.5;

/// `(1/N) Σ |a_i − b_i|`
pub fn mae_between_maps(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mae", a.shape(), b.shape()));
    }
    if a.numel() == 0 {
        return Err(Error::shape("mae", a.shape(), "empty map"));
    }
    let total: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.numel() as f64)
}

/// 1 for usable depth; errors strictly above the threshold give 0.
pub fn label_for_mae(mae: f64) -> u8 {
    u8::from(mae <= LABEL_THRESHOLD)
}

pub fn gate_decision(class_prob: f64, mae_rgb_depth: f64) -> FusionMode {
    if class_prob < CLASS_THRESHOLD && mae_rgb_depth > GATE_THRESHOLD {
        FusionMode::SelfEnhance
    } else {
        FusionMode::Cross
    }
}

/// Gate on the RGB and depth rough maps of one image.
pub fn quality_gate(class_prob: f64, t_rgb: &Tensor, t_depth: &Tensor) -> Result<FusionMode> {
    Ok(gate_decision(class_prob, mae_between_maps(t_rgb, t_depth)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRecord {
    pub id: String,
    /// Error between the depth-only and RGB-D rough maps.
    pub mae: f64,
    pub label: u8,
    /// Present on records produced at inference.
    pub inference: Option<GateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub probability: f64,
    /// Error between the RGB and depth rough maps.
    pub mae_rgb_depth: f64,
    pub decision: FusionMode,
}

impl QualityRecord {
    pub fn labelled(id: impl Into<String>, mae: f64) -> Self {
        Self {
            id: id.into(),
            mae,
            label: label_for_mae(mae),
            inference: None,
        }
    }

    /// `id \t mae \t label`, plus `\t probability \t mae_rgb_depth \t mode`
    /// for inference records. Reals use six decimals.
    pub fn to_line(&self) -> String {
        let mut line = format!("{}\t{:.6}\t{}", self.id, self.mae, self.label);
        if let Some(g) = &self.inference {
            let _ = write!(line, "\t{:.6}\t{:.6}\t{}", g.probability, g.mae_rgb_depth, g.decision);
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::Data(format!("quality record {line:?}: {why}"));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 && fields.len() != 6 {
            return Err(bad("expected 3 or 6 tab-separated fields"));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad("malformed number"));
        let label = match fields[2] {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad("label must be 0 or 1")),
        };
        let inference = if fields.len() == 6 {
            let decision = match fields[5] {
                "CROSS" => FusionMode::Cross,
                "SELF" => FusionMode::SelfEnhance,
                _ => return Err(bad("mode must be CROSS or SELF")),
            };
            Some(GateRecord {
                probability: real(fields[3])?,
                mae_rgb_depth: real(fields[4])?,
                decision,
            })
        } else {
            None
        };
        if fields[0].is_empty() {
            return Err(bad("empty id"));
        }
        Ok(Self {
            id: fields[0].to_string(),
            mae: real(fields[1])?,
            label,
            inference,
        })
    }
}

/// Labels every pair from its depth-only and RGB-D maps, matched by id.
pub fn produce_labels(depth_maps: &[(String, Tensor)], rgbd_maps: &[(String, Tensor)]) -> Result<Vec<QualityRecord>> {
    depth_maps
        .iter()
        .map(|(id, depth)| {
            let (_, rgbd) = rgbd_maps
                .iter()
                .find(|(other, _)| other == id)
                .ok_or_else(|| Error::Data(format!("no RGB-D map for pair {id}")))?;
            Ok(QualityRecord::labelled(id.clone(), mae_between_maps(depth, rgbd)?))
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[QualityRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<QualityRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(QualityRecord::parse_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64) -> Tensor {
        Tensor::full(&[1, 1, 4, 4], v)
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae_between_maps(&flat(0.3), &flat(0.3)).unwrap(), 0.0);
        assert_eq!(mae_between_maps(&flat(1.0), &flat(0.0)).unwrap(), 1.0);
        let a = Tensor::new(&[3, 3], vec![0.1, 0.5, 0.9, 0.0, 1.0, 0.3, 0.7, 0.2, 0.4]).unwrap();
        let b = Tensor::new(&[3, 3], vec![0.2, 0.5, 0.6, 1.0, 0.0, 0.3, 0.1, 0.25, 0.4]).unwrap();
        let mut expect = 0.0;
        for i in 0..9 {
            expect += (a.data()[i] - b.data()[i]).abs();
        }
        assert_eq!(mae_between_maps(&a, &b).unwrap(), expect / 9.0);
        assert!(mae_between_maps(&a, &flat(0.0)).is_err());
    }

    #[test]
    fn label_threshold_is_strict() {
        let labels: Vec<u8> = [0.001, 0.019, 0.020, 0.021, 0.4].iter().map(|&m| label_for_mae(m)).collect();
        assert_eq!(labels, vec![1, 1, 1, 0, 0]);
    }

    #[test]
    fn gate_truth_table() {
        assert_eq!(gate_decision(0.9, 0.30), FusionMode::Cross);
        assert_eq!(gate_decision(0.9, 0.010), FusionMode::Cross);
        assert_eq!(gate_decision(0.1, 0.010), FusionMode::Cross);
        assert_eq!(gate_decision(0.1, 0.30), FusionMode::SelfEnhance);
        assert_eq!(gate_decision(0.5, 0.30), FusionMode::Cross);
        assert_eq!(gate_decision(0.1, 0.015), FusionMode::Cross);
    }

    #[test]
    fn produce_labels_matches_by_id() {
        let depth: Vec<(String, Tensor)> = [("a", 0.0), ("b", 0.0)].iter().map(|(i, v)| (i.to_string(), flat(*v))).collect();
        let rgbd: Vec<(String, Tensor)> = [("b", 0.5), ("a", 0.01)].iter().map(|(i, v)| (i.to_string(), flat(*v))).collect();
        let records = produce_labels(&depth, &rgbd).unwrap();
        assert_eq!((records[0].label, records[1].label), (1, 0));
        assert_eq!(records, produce_labels(&depth, &rgbd).unwrap());
        assert!(produce_labels(&depth, &rgbd[..1]).is_err());
    }

    #[test]
    fn record_lines_round_trip() {
        let plain = QualityRecord::labelled("img_01", 0.0213);
        let gated = QualityRecord {
            inference: Some(GateRecord {
                probability: 0.25,
                mae_rgb_depth: 0.125,
                decision: FusionMode::SelfEnhance,
            }),
            ..QualityRecord::labelled("img_02", 0.5)
        };
        for r in [plain, gated] {
            let line = r.to_line();
            let parsed = QualityRecord::parse_line(&line).unwrap();
            assert_eq!(parsed, r);
            assert_eq!(parsed.to_line(), line);
        }
        assert_eq!(QualityRecord::labelled("x", 0.0213).to_line(), "x\t0.021300\t0");
        assert!(QualityRecord::parse_line("x\t0.1").is_err());
        assert!(QualityRecord::parse_line("x\tnan?\t1").is_err());
    }
}

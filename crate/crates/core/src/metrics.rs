//! Overlap metrics on binarized predictions and the per-case report table.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Dice (DC), Jaccard (JI) and voxelwise accuracy (AC) for one case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub dc: f64,
    pub ji: f64,
    pub ac: f64,
}

/// Binarizes `p` at `threshold` (`p >= threshold` is foreground) and scores
/// it against the binary mask `y`. Empty-vs-empty scores `(1, 1, 1)`.
pub fn evaluate_metrics(y: &[f64], p: &[f64], threshold: f64) -> Result<Scores> {
    if y.len() != p.len() {
        return Err(Error::ShapeMismatch {
            lhs: vec![y.len()],
            rhs: vec![p.len()],
            context: "metrics mask vs prediction",
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidShape("metrics on an empty volume".into()));
    }
    let (mut inter, mut truth, mut pred, mut correct) = (0u64, 0u64, 0u64, 0u64);
    for (&yv, &pv) in y.iter().zip(p) {
        let t = yv >= 0.5;
        let q = pv >= threshold;
        inter += u64::from(t && q);
        truth += u64::from(t);
        pred += u64::from(q);
        correct += u64::from(t == q);
    }
    let union = truth + pred - inter;
    let (dc, ji) = if union == 0 {
        (1.0, 1.0)
    } else {
        (
            2.0 * inter as f64 / (truth + pred) as f64,
            inter as f64 / union as f64,
        )
    };
    Ok(Scores {
        dc,
        ji,
        ac: correct as f64 / y.len() as f64,
    })
}

pub fn evaluate_tensors(y: &Tensor, p: &Tensor, threshold: f64) -> Result<Scores> {
    if y.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            lhs: y.shape().to_vec(),
            rhs: p.shape().to_vec(),
            context: "metrics mask vs prediction",
        });
    }
    evaluate_metrics(y.data(), p.data(), threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseScores {
    pub case_id: String,
    pub scores: Scores,
}

/// Per-case scores plus their mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub per_case: Vec<CaseScores>,
}

const HEADER: &str = "case_id\tdc\tji\tac";

impl MetricsReport {
    pub fn push(&mut self, case_id: impl Into<String>, scores: Scores) {
        self.per_case.push(CaseScores {
            case_id: case_id.into(),
            scores,
        });
    }

    pub fn len(&self) -> usize {
        self.per_case.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_case.is_empty()
    }

    /// Mean of each metric over cases; `None` for an empty report.
    pub fn aggregate(&self) -> Option<Scores> {
        if self.per_case.is_empty() {
            return None;
        }
        let n = self.per_case.len() as f64;
        let sum = self.per_case.iter().fold((0.0, 0.0, 0.0), |acc, c| {
            (acc.0 + c.scores.dc, acc.1 + c.scores.ji, acc.2 + c.scores.ac)
        });
        Some(Scores {
            dc: sum.0 / n,
            ji: sum.1 / n,
            ac: sum.2 / n,
        })
    }

    /// Tab-separated table: header, one row per case, then a `mean` row.
    pub fn to_table(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for c in &self.per_case {
            let s = c.scores;
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}", c.case_id, s.dc, s.ji, s.ac);
        }
        if let Some(s) = self.aggregate() {
            let _ = writeln!(out, "mean\t{:.6}\t{:.6}\t{:.6}", s.dc, s.ji, s.ac);
        }
        out
    }

    /// Parses a table written by [`to_table`](Self::to_table); the `mean` row
    /// is recomputed, not read.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::InvalidValue(format!(
                "metrics table must start with '{HEADER}'"
            )));
        }
        let mut report = MetricsReport::default();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::InvalidValue(format!(
                    "metrics table line {}: expected 4 fields",
                    i + 2
                )));
            }
            if fields[0] == "mean" {
                continue;
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidValue(format!("metrics table line {}: bad number '{s}'", i + 2))
                })
            };
            report.push(
                fields[0],
                Scores {
                    dc: num(fields[1])?,
                    ji: num(fields[2])?,
                    ac: num(fields[3])?,
                },
            );
        }
        Ok(report)
    }
}

use std::fmt;

use crate::error::{Error, Result};
use crate::pipeline::CandidatePair;
use crate::weights::{classify, Decision};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f_score,
        }
    }

    /// Build from `(is_true_link, predicted_match)` outcomes.
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = [0u64; 4];
        for (label, predicted) in outcomes {
            c[match (label, predicted) {
                (true, true) => 0,
                (false, true) => 1,
                (false, false) => 2,
                (true, false) => 3,
            }] += 1;
        }
        Metrics::from_counts(c[0], c[1], c[2], c[3])
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub const CSV_HEADER: &'static str = "tp,fp,tn,fn,accuracy,precision,recall,f_score";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.tp, self.fp, self.tn, self.fn_, self.accuracy, self.precision, self.recall, self.f_score
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp={} fp={} tn={} fn={} accuracy={:.4} precision={:.4} recall={:.4} f_score={:.4}",
            self.tp, self.fp, self.tn, self.fn_, self.accuracy, self.precision, self.recall, self.f_score
        )
    }
}

/// Confusion counts at threshold `tau`. Every pair must carry a label and a
/// probability.
pub fn evaluate(pairs: &[CandidatePair], tau: f64) -> Result<Metrics> {
    let mut outcomes = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (Some(label), Some(prob)) = (p.label, p.probability) else {
            return Err(Error::Invalid(format!(
                "pair ({}, {}) lacks a label or probability",
                p.a_entity, p.b_entity
            )));
        };
        outcomes.push((label, classify(prob, tau) == Decision::Match));
    }
    Ok(Metrics::from_outcomes(outcomes))
}

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{EntityId, LinkedPairSet};
use crate::model::Prediction;
use crate::pipeline::Metrics;
use crate::weights::Decision;

pub const PREDICTIONS_HEADER: &str = "a_id,b_id,g,P,decision";

/// One row of a predictions file. `g` is `None` for pairs sharing no
/// present attribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub a_id: EntityId,
    pub b_id: EntityId,
    pub g: Option<f64>,
    pub p: f64,
    pub decision: Decision,
}

impl From<&Prediction> for PredictionRow {
    fn from(p: &Prediction) -> Self {
        PredictionRow {
            a_id: p.pair.a_entity,
            b_id: p.pair.b_entity,
            g: p.g,
            p: p.p,
            decision: p.decision,
        }
    }
}

/// Floats are written in shortest round-trip form.
pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{PREDICTIONS_HEADER}").map_err(io)?;
    for r in rows {
        let g = r.g.map(|g| format!("{g:?}")).unwrap_or_default();
        writeln!(w, "{},{},{g},{:?},{}", r.a_id, r.b_id, r.p, r.decision).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != PREDICTIONS_HEADER {
        return Err(Error::SchemaMismatch(format!(
            "{}: expected header `{PREDICTIONS_HEADER}`, found `{header}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        let id = |s: &str| s.parse::<u64>().map(EntityId).map_err(|_| bad(format!("bad entity id `{s}`")));
        let float = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
        rows.push(PredictionRow {
            a_id: id(&row[0])?,
            b_id: id(&row[1])?,
            g: if row[2].is_empty() { None } else { Some(float(&row[2])?) },
            p: float(&row[3])?,
            decision: row[4].parse().map_err(|e: Error| bad(e.to_string()))?,
        });
    }
    Ok(rows)
}

/// Score recorded decisions against true links. Links absent from the
/// predictions count as false negatives. Fails when the two files share no
/// A id or no B id.
pub fn evaluate_predictions(rows: &[PredictionRow], truth: &LinkedPairSet) -> Result<Metrics> {
    if !rows.is_empty() && !truth.is_empty() {
        let a_ids: BTreeSet<_> = rows.iter().map(|r| r.a_id).collect();
        let b_ids: BTreeSet<_> = rows.iter().map(|r| r.b_id).collect();
        if !truth.pairs().iter().any(|(a, _)| a_ids.contains(a)) || !truth.pairs().iter().any(|(_, b)| b_ids.contains(b)) {
            return Err(Error::SchemaMismatch(
                "predictions and truth links share no entity ids".into(),
            ));
        }
    }
    let mut seen = BTreeSet::new();
    let mut outcomes = Vec::with_capacity(rows.len() + truth.len());
    for r in rows {
        if !seen.insert((r.a_id, r.b_id)) {
            return Err(Error::Invalid(format!("pair ({}, {}) predicted twice", r.a_id, r.b_id)));
        }
        outcomes.push((truth.contains(r.a_id, r.b_id), r.decision == Decision::Match));
    }
    let missed = truth.pairs().iter().filter(|k| !seen.contains(*k)).count();
    outcomes.extend(std::iter::repeat_n((true, false), missed));
    Ok(Metrics::from_outcomes(outcomes))
}

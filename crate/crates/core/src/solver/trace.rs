use std::cmp::Ordering;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One outer iteration: `x_{t+1}` was produced with step `eta` from `λ_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub eta: f64,
    /// `f(x_{t+1})`.
    pub f: f64,
    /// `h(x_{t+1})`.
    pub h: Vec<f64>,
    /// `‖λ_t‖₂`.
    pub dual_norm: f64,
    /// `‖[h(x_{t+1})]₊‖₁`.
    pub h_violation: f64,
}

impl IterationRecord {
    pub fn new(t: usize, eta: f64, f: f64, h: Vec<f64>, dual_norm: f64) -> Self {
        let h_violation = h.iter().filter(|v| **v > 0.0).fold(0.0, |a, v| a + v);
        IterationRecord { t, eta, f, h, dual_norm, h_violation }
    }

    pub fn is_feasible(&self) -> bool {
        self.h_violation == 0.0
    }

    /// `‖h‖_∞`.
    pub fn h_max_abs(&self) -> f64 {
        self.h.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn line(&self) -> TraceLine {
        TraceLine { t: self.t, eta: self.eta, f: self.f, h_violation: self.h_violation, dual_norm: self.dual_norm }
    }
}

/// The JSON-lines view of an [`IterationRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub t: usize,
    pub eta: f64,
    pub f: f64,
    pub h_violation: f64,
    pub dual_norm: f64,
}

/// Feasible iterates beat infeasible ones. Among feasible iterates the lower
/// objective wins; among infeasible ones the lower violation wins, then the
/// lower objective. Remaining ties go to the earlier iterate.
fn selection_cmp(a: &IterationRecord, b: &IterationRecord) -> Ordering {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        (true, true) => a.f.total_cmp(&b.f).then(a.t.cmp(&b.t)),
        (false, false) => a.h_violation.total_cmp(&b.h_violation).then(a.f.total_cmp(&b.f)).then(a.t.cmp(&b.t)),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    /// Index into `records` of the reported solution.
    pub best_index: Option<usize>,
}

impl RunTrace {
    /// Append a record; returns whether it became the best one.
    pub fn push(&mut self, record: IterationRecord) -> bool {
        let better = match self.best() {
            None => true,
            Some(best) => selection_cmp(&record, best) == Ordering::Less,
        };
        self.records.push(record);
        if better {
            self.best_index = Some(self.records.len() - 1);
        }
        better
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn best(&self) -> Option<&IterationRecord> {
        self.best_index.map(|i| &self.records[i])
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// The best index among the first `horizon` records.
    pub fn best_index_within(&self, horizon: usize) -> Option<usize> {
        let n = horizon.min(self.records.len());
        (0..n).min_by(|&i, &j| selection_cmp(&self.records[i], &self.records[j]))
    }

    /// `max_t ‖h(x_{t+1})‖_∞` over the first `horizon` records.
    pub fn max_h_abs_within(&self, horizon: usize) -> f64 {
        self.records.iter().take(horizon).map(IterationRecord::h_max_abs).fold(0.0, f64::max)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, &r.line())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceLine>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("trace line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StepReport;
use crate::error::{Error, Result};
use crate::models::{GroupChecksums, GroupId, ModelBundle};
use crate::nn::Real;

/// Losses of one iteration; evaluation columns are filled at `eval_every` boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub l_r: Option<f64>,
    pub l_s: Option<f64>,
    pub l_l1: Option<f64>,
    pub l_adv: Option<f64>,
    pub target_mse: Option<f64>,
    pub target_mae: Option<f64>,
}

impl IterationRecord {
    pub fn new(iteration: usize) -> Self {
        Self {
            iteration,
            l_r: None,
            l_s: None,
            l_l1: None,
            l_adv: None,
            target_mse: None,
            target_mae: None,
        }
    }

    /// Keeps the first value seen for each loss.
    pub(crate) fn absorb(&mut self, report: &StepReport) {
        self.l_r = self.l_r.or(report.l_r);
        self.l_s = self.l_s.or(report.l_s);
        self.l_l1 = self.l_l1.or(report.l_l1);
        self.l_adv = self.l_adv.or(report.l_adv);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecksumRecord {
    pub iteration: usize,
    pub checksums: GroupChecksums,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
    pub checksums: Vec<ChecksumRecord>,
}

pub const HISTORY_COLUMNS: [&str; 7] = [
    "iteration",
    "l_r",
    "l_s",
    "l_l1",
    "l_adv",
    "target_mse",
    "target_mae",
];

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub fn push(&mut self, record: IterationRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.iteration > last.iteration, "history iterations must increase");
        }
        self.records.push(record);
    }

    pub fn record_checksums<R: Real>(&mut self, iteration: usize, bundle: &ModelBundle<R>) {
        self.checksums.push(ChecksumRecord {
            iteration,
            checksums: bundle.checksums(),
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Rows carrying evaluation metrics.
    pub fn evaluations(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.target_mse.is_some())
    }

    pub fn last_checksum(&self, id: GroupId) -> Option<u64> {
        self.checksums.last().map(|c| c.checksums[id.index()])
    }

    pub fn to_csv(&self) -> String {
        let mut out = HISTORY_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration,
                cell(r.l_r),
                cell(r.l_s),
                cell(r.l_l1),
                cell(r.l_adv),
                cell(r.target_mse),
                cell(r.target_mae)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the CSV written by [`TrainHistory::to_csv`] (checksums are not part of it).
    pub fn from_csv(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(path, "empty history file"))?;
        if header != HISTORY_COLUMNS.join(",") {
            return Err(Error::parse(path, format!("unexpected header {header:?}")));
        }
        let mut history = TrainHistory::default();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != HISTORY_COLUMNS.len() {
                return Err(Error::parse(path, format!("line {}: expected 7 fields", n + 2)));
            }
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| Error::parse(path, format!("line {}: bad number {s:?}", n + 2)))
                }
            };
            let iteration = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: bad iteration", n + 2)))?;
            let record = IterationRecord {
                iteration,
                l_r: num(fields[1])?,
                l_s: num(fields[2])?,
                l_l1: num(fields[3])?,
                l_adv: num(fields[4])?,
                target_mse: num(fields[5])?,
                target_mae: num(fields[6])?,
            };
            if history.records.last().is_some_and(|l| l.iteration >= iteration) {
                return Err(Error::parse(path, format!("line {}: iteration not increasing", n + 2)));
            }
            history.records.push(record);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_values_bitwise() {
        let mut h = TrainHistory::default();
        let mut r = IterationRecord::new(1);
        r.l_r = Some(0.1 + 0.2);
        r.l_adv = Some(-1.386_294_361_119_890_6);
        h.push(r);
        let mut r = IterationRecord::new(5);
        r.target_mse = Some(1e-17);
        h.push(r);
        let back = TrainHistory::from_csv(Path::new("h.csv"), &h.to_csv()).unwrap();
        assert_eq!(back.records, h.records);
    }

    #[test]
    #[should_panic(expected = "must increase")]
    fn iterations_are_monotone() {
        let mut h = TrainHistory::default();
        h.push(IterationRecord::new(2));
        h.push(IterationRecord::new(2));
    }

    #[test]
    fn bad_csv_is_a_parse_error() {
        let err = TrainHistory::from_csv(Path::new("h.csv"), "iteration,l_r\n1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}

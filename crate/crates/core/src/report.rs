//! Experiment outputs: per-cycle CSV curves and a JSON strategy comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::Strategy;
use crate::experiment::{CycleRecord, ExperimentRun};
use crate::metrics::{mean_defined, ClassIouReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("empty report set")]
    Empty,
    #[error("records disagree on class count ({0} vs {1})")]
    ClassCount(usize, usize),
    #[error("csv line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn round6(v: f64) -> f64 {
    fmt6(v).parse().expect("formatted float parses")
}

fn opt6(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

/// CSV text for a list of cycle records.
///
/// The `miou` column is the mean of the *written* per-class values, so it
/// stays consistent with the row after rounding.
pub fn cycle_csv(records: &[CycleRecord]) -> Result<String, ReportError> {
    let k = records.first().map_or(0, |r| r.iou.len());
    if let Some(r) = records.iter().find(|r| r.iou.len() != k) {
        return Err(ReportError::ClassCount(k, r.iou.len()));
    }
    let mut out = String::from("cycle,miou");
    for c in 0..k {
        write!(out, ",iou_class_{c}").unwrap();
    }
    out.push_str(",theta,filled_below_threshold,wall_time_s\n");
    for r in records {
        let rounded: Vec<Option<f64>> = r.iou.iter().map(|v| v.map(round6)).collect();
        let miou = r.miou.and(mean_defined(&rounded));
        write!(out, "{},{}", r.cycle, opt6(miou)).unwrap();
        for v in &rounded {
            write!(out, ",{}", opt6(*v)).unwrap();
        }
        writeln!(
            out,
            ",{},{},{}",
            opt6(r.theta.as_ref().map(|t| t.theta)),
            r.filled_below_threshold,
            fmt6(r.wall_time)
        )
        .unwrap();
    }
    Ok(out)
}

pub fn emit_cycle_csv(records: &[CycleRecord], path: &Path) -> Result<(), ReportError> {
    let text = cycle_csv(records)?;
    fs::write(path, text).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub cycle: usize,
    pub miou: Option<f64>,
    pub iou: Vec<Option<f64>>,
    pub theta: Option<f64>,
    pub filled_below_threshold: usize,
    pub wall_time: f64,
}

pub fn parse_cycle_csv(text: &str) -> Result<Vec<CsvRow>, ReportError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(ReportError::Parse {
        line: 1,
        reason: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let k = cols.iter().filter(|c| c.starts_with("iou_class_")).count();
    if cols.len() != k + 5 || cols[0] != "cycle" || cols[1] != "miou" {
        return Err(ReportError::Parse {
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let bad = |reason: String| ReportError::Parse { line: n, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(format!("expected {} fields, got {}", cols.len(), f.len())));
        }
        let opt = |s: &str| -> Result<Option<f64>, ReportError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| bad(format!("{s:?}: {e}")))
            }
        };
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        rows.push(CsvRow {
            cycle: int(f[0])?,
            miou: opt(f[1])?,
            iou: f[2..2 + k].iter().map(|s| opt(s)).collect::<Result<_, _>>()?,
            theta: opt(f[2 + k])?,
            filled_below_threshold: int(f[3 + k])?,
            wall_time: opt(f[4 + k])?.ok_or_else(|| bad("missing wall time".into()))?,
        });
    }
    Ok(rows)
}

pub fn read_cycle_csv(path: &Path) -> Result<Vec<CsvRow>, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_cycle_csv(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub final_miou: Option<f64>,
    pub final_iou: Vec<Option<f64>>,
    pub final_labeled: usize,
    pub wall_time: f64,
    /// Per-cycle test mIoU.
    pub curve: Vec<Option<f64>>,
    /// Labeled-set size at each curve point.
    pub labeled: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub miou: Option<f64>,
    pub iou: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub strategies: Vec<StrategySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bound: Option<UpperBound>,
}

impl ComparisonReport {
    pub fn build(
        runs: &BTreeMap<Strategy, ExperimentRun>,
        upper_bound: Option<&ClassIouReport>,
    ) -> Result<Self, ReportError> {
        if runs.is_empty() {
            return Err(ReportError::Empty);
        }
        let strategies = runs
            .values()
            .map(|run| StrategySummary {
                strategy: run.strategy,
                final_miou: run.final_report.miou,
                final_iou: run.final_report.iou.clone(),
                final_labeled: run.final_labeled,
                wall_time: run.wall_time,
                curve: run.records.iter().map(|r| r.miou).collect(),
                labeled: run.records.iter().map(|r| r.labeled_before).collect(),
            })
            .collect();
        Ok(ComparisonReport {
            strategies,
            upper_bound: upper_bound.map(|r| UpperBound {
                miou: r.miou,
                iou: r.iou.clone(),
            }),
        })
    }
}

pub fn emit_comparison(
    runs: &BTreeMap<Strategy, ExperimentRun>,
    upper_bound: Option<&ClassIouReport>,
    path: &Path,
) -> Result<(), ReportError> {
    let report = ComparisonReport::build(runs, upper_bound)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(path, text).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(cycle: usize, iou: Vec<Option<f64>>) -> CycleRecord {
        CycleRecord {
            cycle,
            miou: mean_defined(&iou),
            iou: iou.clone(),
            val_iou: iou,
            weights: None,
            theta: None,
            candidate_count: None,
            selected_ids: vec![],
            filled_below_threshold: 0,
            labeled_before: 0,
            wall_time: 0.25,
        }
    }

    #[test]
    fn structure_and_absent_field() {
        let recs = vec![
            record(1, vec![Some(0.5), Some(0.25), None]),
            record(2, vec![Some(0.5), Some(0.25), Some(0.125)]),
        ];
        let text = cycle_csv(&recs).unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines.len(), 4); // trailing LF
        assert_eq!(
            lines[0],
            "cycle,miou,iou_class_0,iou_class_1,iou_class_2,theta,filled_below_threshold,wall_time_s"
        );
        assert_eq!(lines[1], "1,0.375000,0.500000,0.250000,,,0,0.250000");
        assert!(!text.contains('\r'));
        let back = parse_cycle_csv(&text).unwrap();
        assert_eq!(back[0].iou[2], None);
        assert_eq!(back[1].iou[2], Some(0.125));
    }

    #[test]
    fn mismatched_class_counts() {
        let recs = vec![record(1, vec![Some(0.5)]), record(2, vec![Some(0.5), None])];
        assert!(matches!(cycle_csv(&recs), Err(ReportError::ClassCount(1, 2))));
    }

    #[test]
    fn empty_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_comparison(&BTreeMap::new(), None, &dir.path().join("c.json"));
        assert!(matches!(err, Err(ReportError::Empty)));
    }
}

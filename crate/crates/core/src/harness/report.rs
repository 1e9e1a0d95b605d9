use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellMetrics, GroupReport, SweepReport};
use crate::error::{CtdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = CtdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(CtdError::invalid("report format", format!("unknown format `{other}`"))),
        }
    }
}

pub const SWEEP_HEADER: &str = "strategy,budget,batch_size,delegation_rate,accuracy,auroc";

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), |v| v.to_string())
}

fn push_row(out: &mut String, strategy: &str, budget: f64, batch: usize, m: Option<&CellMetrics>) {
    let _ = writeln!(
        out,
        "{strategy},{budget},{batch},{},{},{}",
        opt(m.map(|m| m.delegation_rate)),
        opt(m.map(|m| m.accuracy)),
        opt(m.and_then(|m| m.auroc)),
    );
}

/// Plot-ready CSV: one row per cell, then the probe-only and expert-only
/// baselines repeated at every budget present in the report.
pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for c in &report.cells {
        push_row(&mut out, c.strategy.name(), c.budget, c.batch_size, c.metrics.as_ref());
    }
    let mut budgets: Vec<f64> = report.cells.iter().map(|c| c.budget).collect();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();
    for (name, m) in [
        ("probe_only", &report.baselines.probe_only),
        ("expert_only", &report.baselines.expert_only),
    ] {
        for &b in &budgets {
            push_row(&mut out, name, b, 0, Some(m));
        }
    }
    out
}

pub fn group_csv(report: &GroupReport) -> String {
    let mut out = String::from("strategy,group,n,mean_v_all,mean_v_delegated,delegation_rate\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.strategy.name(),
            r.group,
            r.n,
            r.mean_v_all,
            opt(r.mean_v_delegated),
            r.delegation_rate
        );
    }
    out
}

/// Write a sweep report. Output depends only on the report contents, so
/// identical reports produce byte-identical files.
pub fn emit_report(report: &SweepReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => sweep_csv(report),
        ReportFormat::Json => report.to_json()?,
    };
    fs::write(path, text).map_err(|e| CtdError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Baselines, Strategy, SweepCell};

    fn metrics(rate: f64) -> CellMetrics {
        CellMetrics { delegation_rate: rate, accuracy: 0.8125, auroc: Some(0.9) }
    }

    fn report(cells: Vec<SweepCell>) -> SweepReport {
        SweepReport {
            cells,
            baselines: Baselines { probe_only: metrics(0.0), expert_only: metrics(1.0) },
            effective_capacity: 0.25,
            n_eval: 16,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(sweep_csv(&report(vec![])), format!("{SWEEP_HEADER}\n"));
    }

    #[test]
    fn one_cell_one_full_row() {
        let cell = SweepCell {
            strategy: Strategy::DvTopk,
            budget: 0.2,
            batch_size: 128,
            metrics: Some(metrics(0.1875)),
            lambda: None,
            fallback: None,
            error: None,
        };
        let csv = sweep_csv(&report(vec![cell]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "dv_topk,0.2,128,0.1875,0.8125,0.9");
        assert_eq!(lines[1].split(',').count(), 6);
        assert!(lines[1].split(',').all(|f| !f.is_empty()));
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn json_round_trip_and_bytes_stable() {
        let cell = SweepCell {
            strategy: Strategy::Ctd,
            budget: 0.35,
            batch_size: 0,
            metrics: Some(metrics(0.3)),
            lambda: Some(f64::INFINITY),
            fallback: Some(true),
            error: None,
        };
        let r = report(vec![cell]);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        emit_report(&r, ReportFormat::Json, &a).unwrap();
        emit_report(&r, ReportFormat::Json, &b).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());
        assert_eq!(SweepReport::from_json(&text).unwrap(), r);
        assert!(emit_report(&r, ReportFormat::Csv, dir.path().join("missing/x.csv")).is_err());
    }
}

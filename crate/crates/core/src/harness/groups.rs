use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{apply_threshold, apply_topk, calibrate_signal, Pipeline, Strategy};
use crate::calibration::CalibrationSettings;
use crate::delegation::TopKPolicy;
use crate::error::{CtdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRecord {
    pub group: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub strategy: Strategy,
    pub group: String,
    pub n: usize,
    pub mean_v_all: f64,
    /// Absent when the strategy delegated nothing in this group.
    pub mean_v_delegated: Option<f64>,
    pub delegation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub alpha: f64,
    pub batch_size: usize,
    pub rows: Vec<GroupRow>,
}

impl GroupReport {
    pub fn row(&self, strategy: Strategy, group: &str) -> Option<&GroupRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.group == group)
    }
}

/// Per-group mean delegation value overall and on the delegated subset,
/// plus the per-group delegation rate, for each strategy's decisions.
pub fn run_group_analysis(
    records: &[GroupRecord],
    decisions: &[(Strategy, Vec<bool>)],
    alpha: f64,
    batch_size: usize,
) -> Result<GroupReport> {
    let mut rows = Vec::new();
    for (strategy, delegated) in decisions {
        if delegated.len() != records.len() {
            return Err(CtdError::invalid("group analysis", "decision count does not match records"));
        }
        // (n, sum v, delegated n, delegated sum v)
        let mut acc: BTreeMap<&str, (usize, f64, usize, f64)> = BTreeMap::new();
        for (r, &d) in records.iter().zip(delegated) {
            let e = acc.entry(r.group.as_str()).or_default();
            e.0 += 1;
            e.1 += r.value;
            if d {
                e.2 += 1;
                e.3 += r.value;
            }
        }
        for (group, (n, sum, nd, sum_d)) in acc {
            rows.push(GroupRow {
                strategy: *strategy,
                group: group.to_string(),
                n,
                mean_v_all: sum / n as f64,
                mean_v_delegated: (nd > 0).then(|| sum_d / nd as f64),
                delegation_rate: nd as f64 / n as f64,
            });
        }
    }
    Ok(GroupReport { alpha, batch_size, rows })
}

/// Group analysis on a pipeline's evaluation split at budget `alpha`.
pub fn analyze_groups(
    pipeline: &Pipeline,
    strategies: &[Strategy],
    settings: &CalibrationSettings,
    batch_size: usize,
    grid_size: usize,
) -> Result<GroupReport> {
    let eval = &pipeline.eval;
    let reference = pipeline.uncertainty_reference()?;
    let mut decisions = Vec::new();
    for &s in strategies {
        let d = if s.is_calibrated() {
            let (cal, r) = calibrate_signal(&pipeline.est, &pipeline.cal, s.signal(), settings, grid_size)?;
            apply_threshold(eval, &cal.policy(s.signal()), r.as_ref())?
        } else {
            let policy = TopKPolicy {
                batch_size,
                budget_fraction: settings.alpha,
                signal: s.signal(),
            };
            apply_topk(eval, &policy, Some(&reference))?
        };
        decisions.push((s, d.iter().map(|x| x.delegate).collect()));
    }
    let records: Vec<GroupRecord> = eval
        .iter()
        .map(|p| GroupRecord {
            group: p.group.clone(),
            value: p.value,
        })
        .collect();
    run_group_analysis(&records, &decisions, settings.alpha, batch_size)
}

use serde::{Deserialize, Serialize};

use super::{apply_threshold, apply_topk, calibrate_signal, evaluate, Pipeline, Strategy};
use crate::calibration::{CalibrationMode, CalibrationSettings};
use crate::delegation::{effective_capacity, PolicyDecision, TopKPolicy};
use crate::error::{CtdError, Result};
use crate::risk::LossKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub budgets: Vec<f64>,
    pub delta: f64,
    pub batch_sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub loss_kind: LossKind,
    pub grid_size: usize,
    pub seed: u64,
}

impl SweepConfig {
    /// `count` evenly spaced budgets from `lo` to `hi` inclusive.
    pub fn budget_levels(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![lo];
        }
        (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                lo * (1.0 - t) + hi * t
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(CtdError::invalid("sweep config", "budgets must lie in (0,1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CtdError::invalid("sweep config", "delta must lie in (0,1)"));
        }
        if self.batch_sizes.contains(&0) {
            return Err(CtdError::invalid("sweep config", "batch sizes must be >= 1"));
        }
        if self.grid_size == 0 {
            return Err(CtdError::invalid("sweep config", "grid_size must be >= 1"));
        }
        Ok(())
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            budgets: Self::budget_levels(0.05, 0.95, 20),
            delta: 0.1,
            batch_sizes: vec![32, 64, 128],
            strategies: Strategy::ALL.to_vec(),
            loss_kind: LossKind::AccuracyError,
            grid_size: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub delegation_rate: f64,
    pub accuracy: f64,
    /// Absent when the evaluation split holds a single class.
    pub auroc: Option<f64>,
}

/// One (strategy, budget, batch size) cell. Calibrated strategies do not
/// batch and carry `batch_size = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub strategy: Strategy,
    pub budget: f64,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CellMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::serde_ext::ext_opt_f64")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub probe_only: CellMetrics,
    pub expert_only: CellMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub baselines: Baselines,
    /// Share of evaluation points with positive delegation value.
    pub effective_capacity: f64,
    pub n_eval: usize,
}

impl SweepReport {
    pub fn cell(&self, strategy: Strategy, budget: f64, batch_size: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| {
            c.strategy == strategy
                && (c.budget - budget).abs() < 1e-12
                && (c.batch_size == batch_size || strategy.is_calibrated())
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: SweepReport = serde_json::from_str(text)?;
        let rate_ok = |m: &CellMetrics| (0.0..=1.0).contains(&m.delegation_rate);
        if !report.cells.iter().filter_map(|c| c.metrics.as_ref()).all(rate_ok) {
            return Err(CtdError::invalid("sweep report", "delegation rate outside [0,1]"));
        }
        Ok(report)
    }
}

fn metrics_of(pipeline: &Pipeline, decisions: Result<Vec<PolicyDecision>>) -> Result<CellMetrics> {
    evaluate(&pipeline.eval, &decisions?)
}

/// Evaluate every requested strategy at every budget on the evaluation split.
///
/// A cell that fails (for instance AUROC-error calibration on a
/// single-class estimation split) is recorded with its error message and
/// the sweep carries on.
pub fn run_sweep(pipeline: &Pipeline, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let eval = &pipeline.eval;
    let reference = pipeline.uncertainty_reference()?;
    let mut strategies = cfg.strategies.clone();
    strategies.sort();
    strategies.dedup();
    let mut budgets = cfg.budgets.clone();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();
    let mut batch_sizes = cfg.batch_sizes.clone();
    batch_sizes.sort_unstable();
    batch_sizes.dedup();

    let mut cells = Vec::new();
    for &strategy in &strategies {
        for &budget in &budgets {
            if strategy.is_calibrated() {
                let settings = CalibrationSettings {
                    alpha: budget,
                    delta: cfg.delta,
                    loss_kind: cfg.loss_kind,
                    mode: CalibrationMode::Pareto,
                };
                let outcome = calibrate_signal(&pipeline.est, &pipeline.cal, strategy.signal(), &settings, cfg.grid_size)
                    .and_then(|(cal, r)| {
                        let policy = cal.policy(strategy.signal());
                        let m = metrics_of(pipeline, apply_threshold(eval, &policy, r.as_ref()))?;
                        Ok((cal, m))
                    });
                cells.push(match outcome {
                    Ok((cal, m)) => SweepCell {
                        strategy,
                        budget,
                        batch_size: 0,
                        metrics: Some(m),
                        lambda: Some(cal.selected),
                        fallback: Some(cal.fallback),
                        error: None,
                    },
                    Err(e) => failed(strategy, budget, 0, e),
                });
            } else {
                for &batch_size in &batch_sizes {
                    let policy = TopKPolicy {
                        batch_size,
                        budget_fraction: budget,
                        signal: strategy.signal(),
                    };
                    cells.push(match metrics_of(pipeline, apply_topk(eval, &policy, Some(&reference))) {
                        Ok(m) => SweepCell {
                            strategy,
                            budget,
                            batch_size,
                            metrics: Some(m),
                            lambda: None,
                            fallback: None,
                            error: None,
                        },
                        Err(e) => failed(strategy, budget, batch_size, e),
                    });
                }
            }
        }
    }

    let decisions = |delegate: bool| -> Vec<PolicyDecision> {
        eval.iter()
            .map(|p| PolicyDecision {
                delegate,
                signal_value: 0.0,
                cascade_score: if delegate { p.expert } else { p.probe },
            })
            .collect()
    };
    let values: Vec<f64> = eval.iter().map(|p| p.value).collect();
    Ok(SweepReport {
        cells,
        baselines: Baselines {
            probe_only: evaluate(eval, &decisions(false))?,
            expert_only: evaluate(eval, &decisions(true))?,
        },
        effective_capacity: effective_capacity(&values),
        n_eval: eval.len(),
    })
}

fn failed(strategy: Strategy, budget: f64, batch_size: usize, e: CtdError) -> SweepCell {
    SweepCell {
        strategy,
        budget,
        batch_size,
        metrics: None,
        lambda: None,
        fallback: None,
        error: Some(e.to_string()),
    }
}

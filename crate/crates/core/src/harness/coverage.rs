use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_threshold, calibrate_signal, DvSource, Pipeline};
use crate::calibration::{CalibrationMode, CalibrationSettings};
use crate::dataset::{split, SplitSpec};
use crate::delegation::Signal;
use crate::error::{CtdError, Result};
use crate::risk::{budget_risk, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageVariant {
    BudgetOnly,
    Pareto,
}

impl CoverageVariant {
    fn mode(self) -> CalibrationMode {
        match self {
            CoverageVariant::BudgetOnly => CalibrationMode::BudgetOnly,
            CoverageVariant::Pareto => CalibrationMode::Pareto,
        }
    }
}

impl std::str::FromStr for CoverageVariant {
    type Err = CtdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "budget_only" => Ok(CoverageVariant::BudgetOnly),
            "pareto" => Ok(CoverageVariant::Pareto),
            other => Err(CtdError::invalid("coverage variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub alpha: f64,
    pub delta: f64,
    pub trials: usize,
    pub variant: CoverageVariant,
    pub loss_kind: LossKind,
    pub grid_size: usize,
    /// Re-split the dev data and refit the DV probe in every trial.
    pub retrain_dv: bool,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            delta: 0.1,
            trials: 500,
            variant: CoverageVariant::Pareto,
            loss_kind: LossKind::AccuracyError,
            grid_size: 100,
            retrain_dv: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub variant: CoverageVariant,
    pub alpha: f64,
    pub delta: f64,
    pub trials: usize,
    /// Share of trials whose realised evaluation rate exceeded `alpha`.
    pub violation_rate: f64,
    /// Realised delegation rate per trial, in trial order.
    pub realized_rates: Vec<f64>,
    /// Counts over 20 equal-width bins of [0, 1].
    pub histogram: Vec<usize>,
}

const BINS: usize = 20;

fn trial_seed(base: u64, trial: usize) -> u64 {
    base ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Repeat calibration over random calibration/evaluation re-splits and
/// measure how often the realised delegation rate overshoots `alpha`.
///
/// Without `retrain_dv` the DV probe stays fixed and only the pooled
/// est/cal/eval data is reshuffled, keeping the pipeline's
/// calibration:evaluation and est:cal ratios.
pub fn run_coverage(
    pipeline: &Pipeline,
    cfg: &CoverageConfig,
    retrain: Option<&DvSource>,
) -> Result<CoverageReport> {
    if cfg.trials == 0 {
        return Err(CtdError::invalid("coverage config", "trials must be >= 1"));
    }
    if cfg.retrain_dv && retrain.is_none() {
        return Err(CtdError::invalid("coverage config", "retrain_dv needs a DV training config"));
    }
    let settings = CalibrationSettings {
        alpha: cfg.alpha,
        delta: cfg.delta,
        loss_kind: cfg.loss_kind,
        mode: cfg.variant.mode(),
    };
    let spec = pipeline.split_spec;
    let pool: Vec<_> = pipeline
        .est
        .iter()
        .chain(&pipeline.cal)
        .chain(&pipeline.eval)
        .cloned()
        .collect();
    let calib_share = spec.calibration / (spec.calibration + spec.evaluation);

    let rates: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(cfg.seed, t);
            let (est, cal, eval) = if cfg.retrain_dv {
                let p = pipeline.resplit(seed, retrain.expect("checked above"))?;
                (p.est, p.cal, p.eval)
            } else {
                let s = SplitSpec {
                    dev: 0.0,
                    calibration: calib_share,
                    evaluation: 1.0 - calib_share,
                    est: spec.est,
                    seed,
                };
                let p = split(&pool, &s)?;
                (p.est, p.cal, p.eval)
            };
            let (result, _) = calibrate_signal(&est, &cal, Signal::Dv, &settings, cfg.grid_size)?;
            let decisions = apply_threshold(&eval, &result.policy(Signal::Dv), None)?;
            Ok(budget_risk(&decisions))
        })
        .collect::<Result<_>>()?;

    let violations = rates.iter().filter(|&&r| r > cfg.alpha).count();
    let mut histogram = vec![0usize; BINS];
    for &r in &rates {
        histogram[((r * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    Ok(CoverageReport {
        variant: cfg.variant,
        alpha: cfg.alpha,
        delta: cfg.delta,
        trials: cfg.trials,
        violation_rate: violations as f64 / cfg.trials as f64,
        realized_rates: rates,
        histogram,
    })
}

//! Experiment driver: data preparation, budget sweeps, coverage validation,
//! group analysis and report emission.

mod coverage;
mod groups;
mod ranking;
mod report;
mod sweep;

pub use coverage::{run_coverage, CoverageConfig, CoverageReport, CoverageVariant};
pub use groups::{analyze_groups, run_group_analysis, GroupRecord, GroupReport, GroupRow};
pub use ranking::{mean_v_at_k_batched, ranking_curves, RankingCurves};
pub use report::{emit_report, group_csv, sweep_csv, ReportFormat};
pub use sweep::{run_sweep, Baselines, CellMetrics, SweepCell, SweepConfig, SweepReport};

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_ctd, CalibrationResult, CalibrationSettings, CandidateGrid, ScoredPoint};
use crate::dataset::{split, Example, SplitSpec};
use crate::delegation::{decide_threshold, decide_topk_batched, PolicyDecision, Signal, ThresholdPolicy, TopKPolicy};
use crate::error::{CtdError, Result};
use crate::probes::{delegation_value, score_dv, score_probe, train_dv_probe, DvTarget, LinearModel, TrainConfig, UncertaintyReference};
use crate::risk::auroc;

/// The five delegation strategies compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ctd,
    UncCalibrated,
    DvTopk,
    UncTopk,
    OracleTopk,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Ctd,
        Strategy::UncCalibrated,
        Strategy::DvTopk,
        Strategy::UncTopk,
        Strategy::OracleTopk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ctd => "ctd",
            Strategy::UncCalibrated => "unc_calibrated",
            Strategy::DvTopk => "dv_topk",
            Strategy::UncTopk => "unc_topk",
            Strategy::OracleTopk => "oracle_topk",
        }
    }

    pub fn signal(self) -> Signal {
        match self {
            Strategy::Ctd | Strategy::DvTopk => Signal::Dv,
            Strategy::UncCalibrated | Strategy::UncTopk => Signal::Uncertainty,
            Strategy::OracleTopk => Signal::Oracle,
        }
    }

    pub fn is_calibrated(self) -> bool {
        matches!(self, Strategy::Ctd | Strategy::UncCalibrated)
    }
}

impl std::str::FromStr for Strategy {
    type Err = CtdError;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CtdError::invalid("strategy", format!("unknown strategy `{s}`")))
    }
}

/// An example with every score the harness needs attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub id: String,
    pub group: String,
    pub label: u8,
    pub probe: f64,
    pub expert: f64,
    /// DV probe output `d(x)`.
    pub dv: f64,
    /// Ground-truth delegation value `v(x, y)`.
    pub value: f64,
}

/// Where the DV probe comes from.
#[derive(Debug, Clone)]
pub enum DvSource {
    Train { config: TrainConfig, target: DvTarget },
    Model(LinearModel),
}

/// Probe-scored data cut into dev / est / cal / eval with the DV probe fitted.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub dv_model: LinearModel,
    pub dev_len: usize,
    pub est: Vec<ScoredExample>,
    pub cal: Vec<ScoredExample>,
    pub eval: Vec<ScoredExample>,
    /// Probe-scored examples and split spec, kept so coverage trials can
    /// re-split from scratch.
    pub examples: Vec<Example>,
    pub split_spec: SplitSpec,
}

impl Pipeline {
    /// Score `data` with the safety probe (precomputed scores win), split it,
    /// and fit or attach the DV probe.
    pub fn build(probe: Option<&LinearModel>, data: &[Example], split_spec: &SplitSpec, dv: &DvSource) -> Result<Self> {
        let examples: Vec<Example> = data
            .iter()
            .map(|e| {
                let mut e = e.clone();
                if e.probe_score.is_none() {
                    let model = probe.ok_or_else(|| {
                        CtdError::invalid("pipeline", format!("example `{}` has no probe score and no probe model was given", e.id))
                    })?;
                    e.probe_score = Some(score_probe(model, &e)?);
                }
                if e.expert_score.is_none() {
                    return Err(CtdError::invalid("pipeline", format!("example `{}` has no expert score", e.id)));
                }
                Ok(e)
            })
            .collect::<Result<_>>()?;
        Self::from_scored(examples, split_spec, dv)
    }

    fn from_scored(examples: Vec<Example>, split_spec: &SplitSpec, dv: &DvSource) -> Result<Self> {
        let parts = split(&examples, split_spec)?;
        let dv_model = match dv {
            DvSource::Model(m) => m.clone(),
            DvSource::Train { config, target } => {
                if parts.dev.is_empty() {
                    return Err(CtdError::EmptySplit("dev"));
                }
                train_dv_probe(&parts.dev, *target, config)?
            }
        };
        let score = |xs: &[Example]| -> Result<Vec<ScoredExample>> {
            xs.iter()
                .map(|e| {
                    let probe = e.probe_score.expect("probe scores filled");
                    let expert = e.expert_score.expect("expert scores checked");
                    Ok(ScoredExample {
                        id: e.id.clone(),
                        group: e.group.clone(),
                        label: e.label,
                        probe,
                        expert,
                        dv: score_dv(&dv_model, e)?,
                        value: delegation_value(probe, expert, e.label),
                    })
                })
                .collect()
        };
        Ok(Self {
            est: score(&parts.est)?,
            cal: score(&parts.cal)?,
            eval: score(&parts.eval)?,
            dev_len: parts.dev.len(),
            dv_model,
            examples,
            split_spec: *split_spec,
        })
    }

    /// Same data, fresh split seed, DV probe refitted on the new dev split.
    pub fn resplit(&self, seed: u64, dv: &DvSource) -> Result<Self> {
        let spec = SplitSpec { seed, ..self.split_spec };
        Self::from_scored(self.examples.clone(), &spec, dv)
    }

    /// Empirical-CDF reference for the uncertainty signal: the testing-split
    /// probe scores.
    pub fn uncertainty_reference(&self) -> Result<UncertaintyReference> {
        UncertaintyReference::new(self.cal.iter().map(|e| e.probe).collect())
    }
}

/// Signal values of `points` for `signal`.
pub fn signal_values(points: &[ScoredExample], signal: Signal, reference: Option<&UncertaintyReference>) -> Result<Vec<f64>> {
    match signal {
        Signal::Dv => Ok(points.iter().map(|p| p.dv).collect()),
        Signal::Oracle => Ok(points.iter().map(|p| p.value).collect()),
        Signal::Uncertainty => {
            let r = reference.ok_or_else(|| CtdError::invalid("signal", "uncertainty signal needs a reference set"))?;
            Ok(points.iter().map(|p| r.signal(p.probe)).collect())
        }
    }
}

fn scored_points(points: &[ScoredExample], signals: &[f64]) -> Vec<ScoredPoint> {
    points
        .iter()
        .zip(signals)
        .map(|(p, &s)| ScoredPoint {
            id: p.id.clone(),
            signal: s,
            probe_score: p.probe,
            expert_score: p.expert,
            label: p.label,
        })
        .collect()
}

/// Calibrate a threshold for `signal` on the given est / cal splits. The
/// uncertainty signal uses the cal probe scores as its reference set.
pub fn calibrate_signal(
    est: &[ScoredExample],
    cal: &[ScoredExample],
    signal: Signal,
    settings: &CalibrationSettings,
    grid_size: usize,
) -> Result<(CalibrationResult, Option<UncertaintyReference>)> {
    if signal == Signal::Oracle {
        return Err(CtdError::invalid("calibration", "the oracle signal is not available at calibration time"));
    }
    let reference = match signal {
        Signal::Uncertainty => Some(UncertaintyReference::new(cal.iter().map(|e| e.probe).collect())?),
        _ => None,
    };
    let est_sig = signal_values(est, signal, reference.as_ref())?;
    let cal_sig = signal_values(cal, signal, reference.as_ref())?;
    let grid = CandidateGrid::from_quantiles(&est_sig, grid_size)?;
    let result = calibrate_ctd(&scored_points(est, &est_sig), &scored_points(cal, &cal_sig), &grid, settings)?;
    Ok((result, reference))
}

pub fn apply_threshold(
    points: &[ScoredExample],
    policy: &ThresholdPolicy,
    reference: Option<&UncertaintyReference>,
) -> Result<Vec<PolicyDecision>> {
    let signals = signal_values(points, policy.signal, reference)?;
    Ok(points
        .iter()
        .zip(signals)
        .map(|(p, s)| decide_threshold(policy, s, p.probe, p.expert))
        .collect())
}

/// Top-k over `points` in their stored order, cut into batches.
pub fn apply_topk(
    points: &[ScoredExample],
    policy: &TopKPolicy,
    reference: Option<&UncertaintyReference>,
) -> Result<Vec<PolicyDecision>> {
    let signals = signal_values(points, policy.signal, reference)?;
    let items: Vec<(f64, f64, f64)> = points
        .iter()
        .zip(signals)
        .map(|(p, s)| (s, p.probe, p.expert))
        .collect();
    decide_topk_batched(policy, &items)
}

/// Accuracy, AUROC and delegation rate of a set of decisions.
pub fn evaluate(points: &[ScoredExample], decisions: &[PolicyDecision]) -> Result<CellMetrics> {
    let scores: Vec<f64> = decisions.iter().map(|d| d.cascade_score).collect();
    let labels: Vec<u8> = points.iter().map(|p| p.label).collect();
    Ok(CellMetrics {
        delegation_rate: crate::risk::budget_risk(decisions),
        accuracy: 1.0 - crate::risk::accuracy_error(&scores, &labels)?,
        auroc: auroc(&scores, &labels).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scored(id: usize, group: &str, label: u8, probe: f64, expert: f64, dv: f64) -> ScoredExample {
        ScoredExample {
            id: format!("s{id}"),
            group: group.into(),
            label,
            probe,
            expert,
            dv,
            value: delegation_value(probe, expert, label),
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("best".parse::<Strategy>().is_err());
    }

    #[test]
    fn build_requires_scores() {
        let ex = Example {
            id: "a".into(),
            group: "g".into(),
            label: 1,
            features: vec![0.0],
            probe_score: Some(0.4),
            expert_score: None,
        };
        let dv = DvSource::Model(LinearModel::zeros(crate::probes::ModelKind::Ridge, 1));
        assert!(Pipeline::build(None, std::slice::from_ref(&ex), &SplitSpec::default(), &dv).is_err());
        let mut no_probe = ex;
        no_probe.probe_score = None;
        no_probe.expert_score = Some(0.5);
        assert!(Pipeline::build(None, &[no_probe], &SplitSpec::default(), &dv).is_err());
    }

    #[test]
    fn oracle_cannot_be_calibrated() {
        let pts: Vec<_> = (0..10).map(|i| scored(i, "g", (i % 2) as u8, 0.3, 0.7, 0.0)).collect();
        assert!(calibrate_signal(&pts[..5], &pts[5..], Signal::Oracle, &CalibrationSettings::new(0.3, 0.1), 10).is_err());
    }
}

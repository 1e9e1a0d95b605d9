//! Threshold calibration with a finite-sample budget guarantee.
//!
//! For each candidate threshold `lambda` the null hypothesis is that its
//! delegation rate exceeds `alpha`. Candidates are Pareto-filtered on the
//! estimation split, tested in order from most to least conservative with
//! exact binomial p-values on the calibration split, and the walk stops at
//! the first non-rejection. Every certified threshold then satisfies
//! `R_B(lambda) <= alpha` simultaneously with probability at least `1 - delta`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::delegation::{decide_threshold, Signal, ThresholdPolicy};
use crate::error::{CtdError, Result};
use crate::risk::{cascade_loss, LossKind};

/// Binomial CDF `P(Bin(n, alpha) <= k)`: the p-value for `H: R_B > alpha`
/// after observing `k` delegations out of `n`.
///
/// Terms are generated by the ratio recurrence in log space and summed with
/// a max-shift, so the result neither underflows nor loses relative precision
/// for large `n`.
pub fn binomial_pvalue(delegated: u64, n: u64, alpha: f64) -> Result<f64> {
    if n == 0 || delegated > n {
        return Err(CtdError::invalid("binomial p-value", format!("k = {delegated}, n = {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CtdError::invalid("binomial p-value", format!("alpha {alpha} outside (0,1)")));
    }
    if delegated == n {
        return Ok(1.0);
    }
    let log_odds = alpha.ln() - (-alpha).ln_1p();
    let mut log_terms = Vec::with_capacity(delegated as usize + 1);
    let mut lt = n as f64 * (-alpha).ln_1p();
    log_terms.push(lt);
    for i in 0..delegated {
        lt += ((n - i) as f64).ln() - ((i + 1) as f64).ln() + log_odds;
        log_terms.push(lt);
    }
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

/// Candidate thresholds, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    #[serde(with = "crate::serde_ext::ext_f64_vec")]
    thresholds: Vec<f64>,
}

impl CandidateGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(CtdError::invalid("grid", "empty"));
        }
        if thresholds.iter().any(|t| t.is_nan()) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CtdError::invalid("grid", "thresholds must be strictly increasing"));
        }
        Ok(Self { thresholds })
    }

    /// `size` thresholds at the empirical quantile levels `i / size`
    /// (linear interpolation) of `scores`, deduplicated, plus `+inf`.
    pub fn from_quantiles(scores: &[f64], size: usize) -> Result<Self> {
        if scores.is_empty() || size == 0 {
            return Err(CtdError::invalid("grid", "need scores and a positive size"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(CtdError::invalid("grid", "non-finite signal"));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let last = (sorted.len() - 1) as f64;
        let mut thresholds: Vec<f64> = (0..size)
            .map(|i| {
                let pos = last * i as f64 / size as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
            })
            .collect();
        thresholds.dedup();
        thresholds.push(f64::INFINITY);
        Self::new(thresholds)
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// A threshold with its empirical (budget, performance) risks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub lambda: f64,
    pub budget: f64,
    pub perf: f64,
}

/// Keep the candidates not dominated in (budget, perf); among exact
/// duplicates only the largest `lambda` survives. Output is ordered by
/// decreasing `lambda`.
pub fn pareto_filter(candidates: &[Candidate]) -> Result<Vec<Candidate>> {
    if candidates.is_empty() {
        return Err(CtdError::invalid("pareto filter", "no candidates"));
    }
    if candidates.iter().any(|c| c.budget.is_nan() || c.perf.is_nan() || c.lambda.is_nan()) {
        return Err(CtdError::invalid("pareto filter", "NaN candidate"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        a.budget
            .total_cmp(&b.budget)
            .then(a.perf.total_cmp(&b.perf))
            .then(b.lambda.total_cmp(&a.lambda))
    });
    // Everything before `c` has budget <= c.budget, so `c` survives iff its
    // perf is strictly below every earlier perf.
    let mut best = f64::INFINITY;
    let mut kept = Vec::new();
    for c in sorted {
        if c.perf < best {
            best = c.perf;
            kept.push(c);
        }
    }
    kept.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
    Ok(kept)
}

/// Walk `(lambda, p)` pairs in the given order and return the prefix whose
/// p-values fall below `delta`.
pub fn fixed_sequence_test(ordered: &[(f64, f64)], delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CtdError::invalid("fixed-sequence test", format!("delta {delta} outside (0,1)")));
    }
    Ok(ordered
        .iter()
        .take_while(|(_, p)| *p < delta)
        .map(|(l, _)| *l)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Pareto filter, then test; pick the certified threshold with the best
    /// estimated performance.
    #[default]
    Pareto,
    /// Test the whole grid and take the most aggressive certified threshold.
    BudgetOnly,
}

impl std::str::FromStr for CalibrationMode {
    type Err = CtdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pareto" => Ok(CalibrationMode::Pareto),
            "budget_only" => Ok(CalibrationMode::BudgetOnly),
            other => Err(CtdError::invalid("calibration mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub alpha: f64,
    pub delta: f64,
    pub loss_kind: LossKind,
    pub mode: CalibrationMode,
}

impl CalibrationSettings {
    pub fn new(alpha: f64, delta: f64) -> Self {
        Self {
            alpha,
            delta,
            loss_kind: LossKind::AccuracyError,
            mode: CalibrationMode::Pareto,
        }
    }
}

/// One example as seen by calibration. Points on the testing split only
/// need `id` and `signal`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPoint {
    pub id: String,
    pub signal: f64,
    pub probe_score: f64,
    pub expert_score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTest {
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub lambda: f64,
    pub delegated: u64,
    pub n: u64,
    pub p_value: f64,
}

/// Full audit trail of one calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub grid: CandidateGrid,
    /// Estimation-split risks for every grid threshold.
    pub estimates: Vec<Candidate>,
    /// Tested candidates (`Λ'`), ordered from most to least conservative.
    pub pareto_set: Vec<Candidate>,
    /// p-values for every member of `pareto_set`, same order.
    pub tests: Vec<HypothesisTest>,
    #[serde(with = "crate::serde_ext::ext_f64_vec")]
    pub certified: Vec<f64>,
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub selected: f64,
    pub fallback: bool,
    pub alpha: f64,
    pub delta: f64,
    pub loss_kind: LossKind,
    pub mode: CalibrationMode,
}

impl CalibrationResult {
    pub fn policy(&self, signal: Signal) -> ThresholdPolicy {
        ThresholdPolicy {
            lambda: self.selected,
            signal,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parse and check the structural invariants of an audit file.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: CalibrationResult = serde_json::from_str(text)?;
        CandidateGrid::new(r.grid.thresholds.clone())?;
        let bad = |m: &str| Err(CtdError::invalid("calibration result", m.to_string()));
        let in_grid = |l: f64| r.grid.thresholds.contains(&l);
        if !r.pareto_set.iter().all(|c| in_grid(c.lambda)) {
            return bad("pareto set not within grid");
        }
        if r.tests.len() != r.pareto_set.len()
            || r.tests.iter().zip(&r.pareto_set).any(|(t, c)| t.lambda != c.lambda)
        {
            return bad("tests do not match the pareto set");
        }
        if r.certified.len() > r.tests.len()
            || r.certified.iter().zip(&r.tests).any(|(l, t)| *l != t.lambda || !(t.p_value < r.delta))
        {
            return bad("certified set is not a rejected prefix");
        }
        if r.fallback != r.certified.is_empty() {
            return bad("fallback flag inconsistent");
        }
        if r.fallback && r.selected != f64::INFINITY {
            return bad("fallback must select +inf");
        }
        if !r.fallback && !r.certified.contains(&r.selected) {
            return bad("selected threshold not certified");
        }
        Ok(r)
    }
}

fn check_probability(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(CtdError::invalid(name, format!("{x} outside (0,1)")))
    }
}

/// Estimation-split risks of every grid threshold.
pub fn estimate_risks(est: &[ScoredPoint], grid: &CandidateGrid, loss_kind: LossKind) -> Result<Vec<Candidate>> {
    let labels: Vec<u8> = est.iter().map(|p| p.label).collect();
    grid.thresholds()
        .iter()
        .map(|&lambda| {
            let policy = ThresholdPolicy { lambda, signal: Signal::Dv };
            let mut delegated = 0usize;
            let scores: Vec<f64> = est
                .iter()
                .map(|p| {
                    let d = decide_threshold(&policy, p.signal, p.probe_score, p.expert_score);
                    delegated += usize::from(d.delegate);
                    d.cascade_score
                })
                .collect();
            Ok(Candidate {
                lambda,
                budget: delegated as f64 / est.len() as f64,
                perf: cascade_loss(&scores, &labels, loss_kind)?,
            })
        })
        .collect()
}

/// Calibrate a delegation threshold on disjoint estimation and testing splits.
pub fn calibrate_ctd(
    est: &[ScoredPoint],
    cal: &[ScoredPoint],
    grid: &CandidateGrid,
    settings: &CalibrationSettings,
) -> Result<CalibrationResult> {
    check_probability("alpha", settings.alpha)?;
    check_probability("delta", settings.delta)?;
    if est.is_empty() || cal.is_empty() {
        return Err(CtdError::invalid("calibration", "estimation and testing splits must be non-empty"));
    }
    let est_ids: HashSet<&str> = est.iter().map(|p| p.id.as_str()).collect();
    if let Some(p) = cal.iter().find(|p| est_ids.contains(p.id.as_str())) {
        return Err(CtdError::Overlap(p.id.clone()));
    }
    if est.iter().chain(cal).any(|p| p.signal.is_nan()) {
        return Err(CtdError::invalid("calibration", "NaN signal"));
    }

    let estimates = estimate_risks(est, grid, settings.loss_kind)?;
    let mut tested = match settings.mode {
        CalibrationMode::Pareto => pareto_filter(&estimates)?,
        CalibrationMode::BudgetOnly => estimates.clone(),
    };
    tested.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));

    let mut cal_signals: Vec<f64> = cal.iter().map(|p| p.signal).collect();
    cal_signals.sort_by(f64::total_cmp);
    let n = cal.len() as u64;
    let tests: Vec<HypothesisTest> = tested
        .iter()
        .map(|c| {
            let delegated = (cal_signals.len() - cal_signals.partition_point(|&s| s <= c.lambda)) as u64;
            Ok(HypothesisTest {
                lambda: c.lambda,
                delegated,
                n,
                p_value: binomial_pvalue(delegated, n, settings.alpha)?,
            })
        })
        .collect::<Result<_>>()?;

    let ordered: Vec<(f64, f64)> = tests.iter().map(|t| (t.lambda, t.p_value)).collect();
    let certified = fixed_sequence_test(&ordered, settings.delta)?;

    let selected = match settings.mode {
        CalibrationMode::Pareto => tested[..certified.len()]
            .iter()
            // certified is ordered by decreasing lambda, so strict `<` keeps
            // the larger lambda on ties
            .fold(None::<&Candidate>, |best, c| match best {
                Some(b) if b.perf <= c.perf => Some(b),
                _ => Some(c),
            })
            .map(|c| c.lambda),
        CalibrationMode::BudgetOnly => certified.last().copied(),
    };
    let fallback = selected.is_none();
    Ok(CalibrationResult {
        grid: grid.clone(),
        estimates,
        pareto_set: tested,
        tests,
        certified,
        selected: selected.unwrap_or(f64::INFINITY),
        fallback,
        alpha: settings.alpha,
        delta: settings.delta,
        loss_kind: settings.loss_kind,
        mode: settings.mode,
    })
}

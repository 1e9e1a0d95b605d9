//! Empirical risks and ranking metrics.

use serde::{Deserialize, Serialize};

use crate::delegation::{top_k_indices, PolicyDecision};
use crate::error::{CtdError, Result};
use crate::probes::hard_prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    AccuracyError,
    AurocError,
}

impl std::str::FromStr for LossKind {
    type Err = CtdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy_error" | "accuracy" => Ok(LossKind::AccuracyError),
            "auroc_error" | "auroc" => Ok(LossKind::AurocError),
            other => Err(CtdError::invalid("loss kind", format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimates {
    pub budget: f64,
    pub perf: f64,
    pub loss_kind: LossKind,
    pub n: usize,
}

impl RiskEstimates {
    pub fn from_decisions(decisions: &[PolicyDecision], labels: &[u8], loss_kind: LossKind) -> Result<Self> {
        let scores: Vec<f64> = decisions.iter().map(|d| d.cascade_score).collect();
        Ok(Self {
            budget: budget_risk(decisions),
            perf: cascade_loss(&scores, labels, loss_kind)?,
            loss_kind,
            n: decisions.len(),
        })
    }
}

/// Fraction of decisions that delegate (0 for an empty list).
pub fn budget_risk(decisions: &[PolicyDecision]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions.iter().filter(|d| d.delegate).count() as f64 / decisions.len() as f64
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(CtdError::invalid(
            "metric input",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(CtdError::invalid("metric input", "empty"));
    }
    Ok(())
}

/// Share of examples where `score > 0.5` disagrees with the label.
pub fn accuracy_error(cascade_scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(cascade_scores, labels)?;
    let wrong = cascade_scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| hard_prediction(s) != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Area under the ROC curve via midranks (Mann-Whitney U); ties count 1/2.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CtdError::invalid("auroc", "both classes must be present"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CtdError::invalid("auroc", "NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (doubled) midranks of the positives keeps everything integral.
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, midrank doubled = i + j + 2
        let mid2 = (i + j + 2) as u64;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        pos_rank_sum2 += mid2 * pos_in_tie;
        i = j + 1;
    }
    let np = n_pos as u64;
    let u2 = pos_rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * n_neg as u64) as f64)
}

/// Cascade loss under `kind`: accuracy error or `1 - AUROC`.
pub fn cascade_loss(scores: &[f64], labels: &[u8], kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::AccuracyError => accuracy_error(scores, labels),
        LossKind::AurocError => Ok(1.0 - auroc(scores, labels)?),
    }
}

/// Mean of `values` over the top `floor(fraction * N)` entries by `signal`
/// (ties by index).
pub fn mean_v_at_k(signal: &[f64], values: &[f64], fraction: f64) -> Result<f64> {
    if signal.len() != values.len() {
        return Err(CtdError::invalid("mean_v_at_k", "signal and values differ in length"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CtdError::invalid("mean_v_at_k", "fraction outside (0,1]"));
    }
    let k = (fraction * signal.len() as f64).floor() as usize;
    if k == 0 {
        return Err(CtdError::invalid("mean_v_at_k", "selection is empty"));
    }
    let idx = top_k_indices(signal, k);
    Ok(idx.iter().map(|&i| values[i]).sum::<f64>() / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn decisions(delegated: usize, n: usize) -> Vec<PolicyDecision> {
        (0..n)
            .map(|i| PolicyDecision {
                delegate: i < delegated,
                signal_value: 0.0,
                cascade_score: 0.5,
            })
            .collect()
    }

    #[test]
    fn budget_risk_counts() {
        assert_eq!(budget_risk(&decisions(0, 10)), 0.0);
        assert_eq!(budget_risk(&decisions(10, 10)), 1.0);
        assert_eq!(budget_risk(&decisions(3, 10)), 0.3);
    }

    #[test]
    fn accuracy_error_examples() {
        assert_eq!(accuracy_error(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy_error(&[0.0, 1.0], &[1, 0]).unwrap(), 1.0);
        assert!((accuracy_error(&[0.6, 0.4, 0.5], &[1, 1, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy_error(&[0.6], &[1, 0]).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(auroc(&[0.3, 0.4], &[1, 1]).is_err());
        assert_eq!(cascade_loss(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1], LossKind::AurocError).unwrap(), 0.25);
    }

    #[test]
    fn mean_v_at_k_examples() {
        let v = [0.5, -0.2, 0.1, 0.3];
        assert!((mean_v_at_k(&[0.0, 1.0, 2.0, 3.0], &v, 1.0).unwrap() - 0.175).abs() < 1e-15);
        assert_eq!(mean_v_at_k(&v, &v, 0.5).unwrap(), 0.4);
        // constant signal takes the first floor(f N) indices
        assert!((mean_v_at_k(&[1.0; 4], &v, 0.75).unwrap() - 0.4 / 3.0).abs() < 1e-15);
        assert!(mean_v_at_k(&[1.0; 4], &v, 0.2).is_err());
        assert!(mean_v_at_k(&[1.0; 4], &v, 0.0).is_err());
    }

    fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_count(rows in proptest::collection::vec((0u8..8, 0u8..2), 2..50)) {
            let scores: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 8.0).collect();
            let labels: Vec<u8> = rows.iter().map(|r| r.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), brute_auroc(&scores, &labels));
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&warped, &labels).unwrap(), auroc(&scores, &labels).unwrap());
        }

        #[test]
        fn oracle_curve_is_non_increasing(values in proptest::collection::vec(-1.0f64..1.0, 10..60)) {
            let mut last = f64::INFINITY;
            for i in 1..=10 {
                let m = mean_v_at_k(&values, &values, i as f64 / 10.0).unwrap();
                prop_assert!(m <= last + 1e-12);
                last = m;
            }
        }
    }
}

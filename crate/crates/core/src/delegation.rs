//! Delegation policies and the cascade output.
//!
//! A delegated input takes the expert's score, a retained one keeps the
//! probe's. Threshold policies decide per input with the strict rule
//! `signal > lambda`; top-k policies need a whole batch.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{CtdError, Result};
use crate::probes::{delegation_value, UncertaintyReference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Dv,
    Uncertainty,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDecision {
    pub delegate: bool,
    pub signal_value: f64,
    pub cascade_score: f64,
}

impl PolicyDecision {
    fn new(delegate: bool, signal_value: f64, probe_score: f64, expert_score: f64) -> Self {
        Self {
            delegate,
            signal_value,
            cascade_score: if delegate { expert_score } else { probe_score },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    /// `+inf` never delegates.
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub lambda: f64,
    pub signal: Signal,
}

impl ThresholdPolicy {
    pub fn never() -> Self {
        Self {
            lambda: f64::INFINITY,
            signal: Signal::Dv,
        }
    }
}

pub fn decide_threshold(
    policy: &ThresholdPolicy,
    signal_value: f64,
    probe_score: f64,
    expert_score: f64,
) -> PolicyDecision {
    PolicyDecision::new(signal_value > policy.lambda, signal_value, probe_score, expert_score)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKPolicy {
    pub batch_size: usize,
    pub budget_fraction: f64,
    pub signal: Signal,
}

impl TopKPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CtdError::invalid("top-k policy", "batch size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(CtdError::invalid("top-k policy", "budget fraction outside [0,1]"));
        }
        Ok(())
    }

    /// Delegations granted to a batch of `len` inputs: `floor(alpha * len)`.
    pub fn quota(&self, len: usize) -> usize {
        ((self.budget_fraction * len as f64).floor() as usize).min(len)
    }
}

/// Indices of the `k` largest values; ties go to the earlier index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| match values[b].total_cmp(&values[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order.truncate(k);
    order
}

/// Top-k delegation within one batch of `(signal, probe_score, expert_score)`.
pub fn decide_topk(policy: &TopKPolicy, batch: &[(f64, f64, f64)]) -> Vec<PolicyDecision> {
    let signals: Vec<f64> = batch.iter().map(|b| b.0).collect();
    let mut chosen = vec![false; batch.len()];
    for i in top_k_indices(&signals, policy.quota(batch.len())) {
        chosen[i] = true;
    }
    batch
        .iter()
        .zip(chosen)
        .map(|(&(s, p, e), d)| PolicyDecision::new(d, s, p, e))
        .collect()
}

/// Run a top-k policy over a stream cut into consecutive batches of
/// `batch_size`; the final batch may be shorter.
pub fn decide_topk_batched(policy: &TopKPolicy, items: &[(f64, f64, f64)]) -> Result<Vec<PolicyDecision>> {
    policy.validate()?;
    Ok(items
        .chunks(policy.batch_size)
        .flat_map(|batch| decide_topk(policy, batch))
        .collect())
}

/// Ground-truth delegation value, the signal of the oracle baseline.
pub fn oracle_signal(probe_score: f64, expert_score: f64, label: u8) -> f64 {
    delegation_value(probe_score, expert_score, label)
}

/// Share of points whose delegation value is strictly positive.
pub fn effective_capacity(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v > 0.0).count() as f64 / values.len() as f64
}

/// Serialised policy, as written by `ctd calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicyArtifact {
    Threshold {
        #[serde(flatten)]
        policy: ThresholdPolicy,
        /// Path of the DV model the threshold applies to.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dv_model: Option<String>,
        /// Frozen reference set for the uncertainty signal.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        uncertainty_reference: Option<UncertaintyReference>,
    },
    TopK(TopKPolicy),
}

impl PolicyArtifact {
    pub fn from_json(text: &str) -> Result<Self> {
        let artifact: PolicyArtifact = serde_json::from_str(text)?;
        match &artifact {
            PolicyArtifact::Threshold { policy, uncertainty_reference, .. } => {
                if policy.lambda.is_nan() {
                    return Err(CtdError::invalid("policy", "lambda is NaN"));
                }
                if policy.signal == Signal::Uncertainty && uncertainty_reference.is_none() {
                    return Err(CtdError::invalid("policy", "uncertainty policy without reference set"));
                }
                if let Some(r) = uncertainty_reference {
                    UncertaintyReference::new(r.scores().to_vec())?;
                }
            }
            PolicyArtifact::TopK(p) => p.validate()?,
        }
        Ok(artifact)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(lambda: f64) -> ThresholdPolicy {
        ThresholdPolicy { lambda, signal: Signal::Dv }
    }

    #[test]
    fn threshold_case_studies() {
        let d = decide_threshold(&dv(0.39), 1.52, 2.5e-4, 1.0);
        assert!(d.delegate);
        assert_eq!(d.cascade_score, 1.0);
        let d = decide_threshold(&dv(0.39), -0.66, 0.051, 1.0);
        assert!(!d.delegate);
        assert_eq!(d.cascade_score, 0.051);
        assert!(!decide_threshold(&ThresholdPolicy::never(), 1e300, 0.2, 0.9).delegate);
        // strict inequality
        assert!(!decide_threshold(&dv(0.5), 0.5, 0.2, 0.9).delegate);
    }

    fn batch(signals: &[f64]) -> Vec<(f64, f64, f64)> {
        signals.iter().map(|&s| (s, 0.2, 0.8)).collect()
    }

    #[test]
    fn topk_examples() {
        let b = batch(&[0.9, 0.1, 0.5, 0.7]);
        let pol = |a| TopKPolicy { batch_size: 4, budget_fraction: a, signal: Signal::Dv };
        let picked: Vec<usize> = decide_topk(&pol(0.5), &b)
            .iter()
            .enumerate()
            .filter(|(_, d)| d.delegate)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(picked, vec![0, 3]);
        assert!(decide_topk(&pol(0.0), &b).iter().all(|d| !d.delegate));
        assert!(decide_topk(&pol(1.0), &b).iter().all(|d| d.delegate && d.cascade_score == 0.8));
    }

    #[test]
    fn topk_ties_prefer_earlier() {
        assert_eq!(top_k_indices(&[1.0, 2.0, 2.0, 2.0], 2), vec![1, 2]);
    }

    #[test]
    fn batched_topk_counts() {
        let items = batch(&(0..10).map(|i| i as f64).collect::<Vec<_>>());
        let pol = TopKPolicy { batch_size: 4, budget_fraction: 0.5, signal: Signal::Dv };
        let d = decide_topk_batched(&pol, &items).unwrap();
        // batches 4, 4, 2 -> 2 + 2 + 1
        assert_eq!(d.iter().filter(|d| d.delegate).count(), 5);
        let bad = TopKPolicy { batch_size: 0, ..pol };
        assert!(decide_topk_batched(&bad, &items).is_err());
    }

    #[test]
    fn oracle_and_capacity() {
        assert_eq!(oracle_signal(0.4, 0.4, 1), 0.0);
        assert!((oracle_signal(0.051, 1.0, 0) + 0.949).abs() < 1e-12);
        assert!((oracle_signal(0.3, 0.7, 1) - 0.4).abs() < 1e-12);
        assert!((oracle_signal(0.3, 0.7, 1) + oracle_signal(0.3, 0.7, 0)).abs() < 1e-12);
        assert_eq!(effective_capacity(&[-0.1, -0.2]), 0.0);
        assert_eq!(effective_capacity(&[-0.1, 0.2, 0.0, 0.5]), 0.5);
        assert_eq!(effective_capacity(&[0.1, 0.2]), 1.0);
    }

    #[test]
    fn artifact_round_trip() {
        let a = PolicyArtifact::Threshold {
            policy: ThresholdPolicy::never(),
            dv_model: Some("dv.json".into()),
            uncertainty_reference: None,
        };
        let text = a.to_json().unwrap();
        assert!(text.contains("\"inf\""));
        assert_eq!(PolicyArtifact::from_json(&text).unwrap(), a);
        let t = PolicyArtifact::TopK(TopKPolicy { batch_size: 128, budget_fraction: 0.2, signal: Signal::Uncertainty });
        assert_eq!(PolicyArtifact::from_json(&t.to_json().unwrap()).unwrap(), t);
        assert!(PolicyArtifact::from_json(r#"{"type":"threshold","lambda":0.1,"signal":"uncertainty"}"#).is_err());
        assert!(PolicyArtifact::from_json(r#"{"type":"top_k","batch_size":0,"budget_fraction":0.2,"signal":"dv"}"#).is_err());
    }

    proptest! {
        #[test]
        fn exclusivity_and_monotonicity(
            signals in proptest::collection::vec(-2.0f64..2.0, 1..60),
            l1 in -2.0f64..2.0, l2 in -2.0f64..2.0,
        ) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            for &s in &signals {
                let a = decide_threshold(&dv(hi), s, 0.3, 0.9);
                let b = decide_threshold(&dv(lo), s, 0.3, 0.9);
                prop_assert!(a.cascade_score == 0.3 || a.cascade_score == 0.9);
                prop_assert!(!a.delegate || b.delegate);
            }
        }

        #[test]
        fn topk_exact_quota(signals in proptest::collection::vec(-1.0f64..1.0, 1..64), alpha in 0.0f64..=1.0) {
            let pol = TopKPolicy { batch_size: signals.len(), budget_fraction: alpha, signal: Signal::Dv };
            let d = decide_topk(&pol, &batch(&signals));
            let k = (alpha * signals.len() as f64).floor() as usize;
            prop_assert_eq!(d.iter().filter(|d| d.delegate).count(), k);
        }

        #[test]
        fn oracle_set_has_best_mean_value(
            values in proptest::collection::vec(-1.0f64..1.0, 1..40),
            other in proptest::collection::vec(-1.0f64..1.0, 40),
        ) {
            let other = &other[..values.len()];
            for k in 1..=values.len() {
                let mean = |idx: Vec<usize>| idx.iter().map(|&i| values[i]).sum::<f64>() / k as f64;
                prop_assert!(mean(top_k_indices(&values, k)) >= mean(top_k_indices(other, k)) - 1e-12);
            }
        }
    }
}

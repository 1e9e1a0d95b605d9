use serde::{Deserialize, Serialize};

use super::{signal_values, Pipeline};
use crate::delegation::{top_k_indices, Signal};
use crate::error::{CtdError, Result};
use crate::risk::mean_v_at_k;

/// Mean delegation value of the top-k evaluation points per signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingCurves {
    pub fractions: Vec<f64>,
    /// `None` ranks the whole split at once.
    pub batch_size: Option<usize>,
    pub oracle: Vec<f64>,
    pub dv: Vec<f64>,
    pub uncertainty: Vec<f64>,
    /// No-ranking baseline: the mean over the whole split, whatever the fraction.
    pub random: Vec<f64>,
}

/// Like [`mean_v_at_k`], but the top `floor(fraction * len)` are taken
/// inside each consecutive batch and the mean runs over all selections.
pub fn mean_v_at_k_batched(signal: &[f64], values: &[f64], fraction: f64, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(CtdError::invalid("mean_v_at_k", "batch size must be >= 1"));
    }
    if signal.len() != values.len() {
        return Err(CtdError::invalid("mean_v_at_k", "signal and values differ in length"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (s, v) in signal.chunks(batch_size).zip(values.chunks(batch_size)) {
        let k = (fraction * s.len() as f64).floor() as usize;
        for i in top_k_indices(s, k) {
            sum += v[i];
            count += 1;
        }
    }
    if count == 0 {
        return Err(CtdError::invalid("mean_v_at_k", "selection is empty"));
    }
    Ok(sum / count as f64)
}

pub fn ranking_curves(pipeline: &Pipeline, fractions: &[f64], batch_size: Option<usize>) -> Result<RankingCurves> {
    let eval = &pipeline.eval;
    let reference = pipeline.uncertainty_reference()?;
    let values: Vec<f64> = eval.iter().map(|p| p.value).collect();
    let curve = |signal: Signal| -> Result<Vec<f64>> {
        let s = signal_values(eval, signal, Some(&reference))?;
        fractions
            .iter()
            .map(|&f| match batch_size {
                Some(b) => mean_v_at_k_batched(&s, &values, f, b),
                None => mean_v_at_k(&s, &values, f),
            })
            .collect()
    };
    let global = mean_v_at_k(&values, &values, 1.0)?;
    Ok(RankingCurves {
        fractions: fractions.to_vec(),
        batch_size,
        oracle: curve(Signal::Oracle)?,
        dv: curve(Signal::Dv)?,
        uncertainty: curve(Signal::Uncertainty)?,
        random: vec![global; fractions.len()],
    })
}

//! Linear probes: the logistic safety probe, the ridge delegation-value (DV)
//! probe, and the proximity-to-median uncertainty baseline.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::error::{CtdError, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Logistic L2 penalty, or the ridge `gamma`.
    pub l2_strength: f64,
    pub max_iters: usize,
    /// Gradient-norm stopping tolerance (logistic only).
    pub tolerance: f64,
    pub seed: u64,
    /// Standardise features before the ridge solve (weights are mapped back).
    #[serde(default)]
    pub standardize: bool,
}

impl TrainConfig {
    pub fn logistic_default() -> Self {
        Self {
            l2_strength: 1e-3,
            max_iters: 10_000,
            tolerance: 1e-8,
            seed: 0,
            standardize: false,
        }
    }

    pub fn ridge_default() -> Self {
        Self {
            l2_strength: 1.0,
            ..Self::logistic_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(CtdError::invalid("train config", "tolerance must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(CtdError::invalid("train config", "max_iters must be >= 1"));
        }
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(CtdError::invalid("train config", "l2_strength must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub train_config: TrainConfig,
}

impl LinearModel {
    pub fn zeros(kind: ModelKind, dim: usize) -> Self {
        let train_config = match kind {
            ModelKind::Logistic => TrainConfig::logistic_default(),
            ModelKind::Ridge => TrainConfig::ridge_default(),
        };
        Self {
            kind,
            dim,
            weights: vec![0.0; dim],
            intercept: 0.0,
            train_config,
        }
    }

    pub fn linear(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.dim {
            return Err(CtdError::Dimension {
                expected: self.dim,
                found: features.len(),
            });
        }
        Ok(dot(&self.weights, features) + self.intercept)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: LinearModel = serde_json::from_str(text)?;
        if model.weights.len() != model.dim {
            return Err(CtdError::Dimension {
                expected: model.dim,
                found: model.weights.len(),
            });
        }
        if !model.intercept.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(CtdError::invalid("model", "non-finite parameter"));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| CtdError::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| CtdError::io(path, e))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_features(data: &[Example]) -> Result<usize> {
    let dim = data[0].dim();
    if let Some(bad) = data.iter().find(|e| e.dim() != dim) {
        return Err(CtdError::Dimension {
            expected: dim,
            found: bad.dim(),
        });
    }
    Ok(dim)
}

/// Mean log-loss plus `l2/2 * |w|^2`; the intercept is unpenalised.
pub fn logistic_objective(weights: &[f64], intercept: f64, data: &[Example], l2: f64) -> f64 {
    let n = data.len() as f64;
    let loss: f64 = data
        .iter()
        .map(|e| {
            let m = dot(weights, &e.features) + intercept;
            softplus(m) - f64::from(e.label) * m
        })
        .sum::<f64>()
        / n;
    loss + 0.5 * l2 * dot(weights, weights)
}

/// Analytic gradient of [`logistic_objective`]; the intercept component is last.
pub fn logistic_gradient(weights: &[f64], intercept: f64, data: &[Example], l2: f64) -> Vec<f64> {
    let dim = weights.len();
    let n = data.len() as f64;
    let mut grad = vec![0.0; dim + 1];
    for e in data {
        let r = sigmoid(dot(weights, &e.features) + intercept) - f64::from(e.label);
        for (g, x) in grad.iter_mut().zip(&e.features) {
            *g += r * x;
        }
        grad[dim] += r;
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    for (g, w) in grad.iter_mut().zip(weights) {
        *g += l2 * w;
    }
    grad
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LinearModel,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// False when `max_iters` ran out (or the line search stalled) first.
    pub converged: bool,
}

/// Full-batch gradient descent with an Armijo backtracking line search.
///
/// The trial step is the Barzilai-Borwein step from the previous iterate,
/// which keeps iteration counts low on poorly conditioned data while the
/// line search keeps every step monotone.
pub fn train_logistic(train: &[Example], cfg: &TrainConfig) -> Result<LogisticFit> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(CtdError::invalid("training set", "need at least 2 examples"));
    }
    if train.iter().all(|e| e.label == train[0].label) {
        return Err(CtdError::SingleClass);
    }
    let dim = check_features(train)?;
    let l2 = cfg.l2_strength;

    let mut params = vec![0.0; dim + 1];
    let objective = |p: &[f64]| logistic_objective(&p[..dim], p[dim], train, l2);
    let gradient = |p: &[f64]| logistic_gradient(&p[..dim], p[dim], train, l2);

    let mut f = objective(&params);
    let mut g = gradient(&params);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let gnorm2 = dot(&g, &g);
        if !f.is_finite() || !gnorm2.is_finite() {
            return Err(CtdError::NonFinite("logistic training"));
        }
        if gnorm2.sqrt() <= cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut t = step;
        let (next, f_next) = loop {
            let cand: Vec<f64> = params.iter().zip(&g).map(|(p, gi)| p - t * gi).collect();
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * gnorm2 {
                break (cand, fc);
            }
            t *= 0.5;
            if t < 1e-20 {
                break (params.clone(), f);
            }
        };
        if t < 1e-20 {
            break;
        }
        let g_next = gradient(&next);
        let s: Vec<f64> = next.iter().zip(&params).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-10, 1e10) } else { 2.0 * t };
        params = next;
        f = f_next;
        g = g_next;
    }
    let gradient_norm = dot(&g, &g).sqrt();
    converged |= gradient_norm <= cfg.tolerance;
    Ok(LogisticFit {
        model: LinearModel {
            kind: ModelKind::Logistic,
            dim,
            intercept: params[dim],
            weights: params[..dim].to_vec(),
            train_config: cfg.clone(),
        },
        iterations,
        gradient_norm,
        converged,
    })
}

/// Safety score of an example; a precomputed `probe_score` wins.
pub fn score_probe(model: &LinearModel, x: &Example) -> Result<f64> {
    if let Some(s) = x.probe_score {
        return Ok(s);
    }
    if model.kind != ModelKind::Logistic {
        return Err(CtdError::invalid("model", "safety probe must be logistic"));
    }
    Ok(sigmoid(model.linear(&x.features)?))
}

fn prob_of_label(score: f64, label: u8) -> f64 {
    if label == 1 {
        score
    } else {
        1.0 - score
    }
}

/// Hard prediction with the strict `> 0.5` rule; exactly 0.5 predicts 0.
pub fn hard_prediction(score: f64) -> u8 {
    u8::from(score > 0.5)
}

/// Probability mass the expert puts on the true label minus the probe's.
pub fn delegation_value(probe_score: f64, expert_score: f64, label: u8) -> f64 {
    prob_of_label(expert_score, label) - prob_of_label(probe_score, label)
}

/// 1 iff the probe's hard prediction is wrong and the expert's is right.
pub fn delegation_value_binary(probe_score: f64, expert_score: f64, label: u8) -> u8 {
    u8::from(hard_prediction(probe_score) != label && hard_prediction(expert_score) == label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DvTarget {
    #[default]
    Continuous,
    Binary,
}

impl std::str::FromStr for DvTarget {
    type Err = CtdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(DvTarget::Continuous),
            "binary" => Ok(DvTarget::Binary),
            other => Err(CtdError::invalid("dv target", format!("unknown target `{other}`"))),
        }
    }
}

/// Per-example regression target for the DV probe.
pub fn dv_target(example: &Example, target: DvTarget) -> Result<f64> {
    let (p, e) = match (example.probe_score, example.expert_score) {
        (Some(p), Some(e)) => (p, e),
        _ => {
            return Err(CtdError::invalid(
                "dv training set",
                format!("example `{}` lacks probe or expert score", example.id),
            ))
        }
    };
    Ok(match target {
        DvTarget::Continuous => delegation_value(p, e, example.label),
        DvTarget::Binary => f64::from(delegation_value_binary(p, e, example.label)),
    })
}

/// Closed-form ridge regression on centred data with an unpenalised intercept.
///
/// Solves `(Zc^T Zc + gamma I) w = Zc^T vc`, then sets
/// `b = mean(v) - w . mean(z)`.
pub fn train_dv_probe(dev: &[Example], target: DvTarget, cfg: &TrainConfig) -> Result<LinearModel> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(CtdError::invalid("dv training set", "empty"));
    }
    let dim = check_features(dev)?;
    let n = dev.len();
    let targets: Vec<f64> = dev.iter().map(|e| dv_target(e, target)).collect::<Result<_>>()?;
    let v_mean = targets.iter().sum::<f64>() / n as f64;

    let z = DMatrix::from_fn(n, dim, |i, j| dev[i].features[j]);
    let means: Vec<f64> = (0..dim).map(|j| z.column(j).mean()).collect();
    let scales: Vec<f64> = (0..dim)
        .map(|j| {
            if !cfg.standardize {
                return 1.0;
            }
            let var = z.column(j).iter().map(|x| (x - means[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let zc = DMatrix::from_fn(n, dim, |i, j| (z[(i, j)] - means[j]) / scales[j]);
    let vc = DVector::from_iterator(n, targets.iter().map(|v| v - v_mean));

    let mut gram = zc.transpose() * &zc;
    for j in 0..dim {
        gram[(j, j)] += cfg.l2_strength;
    }
    let rhs = zc.transpose() * vc;
    let w_scaled = solve_spd(gram, &rhs)?;

    let weights: Vec<f64> = (0..dim).map(|j| w_scaled[j] / scales[j]).collect();
    let intercept = v_mean - dot(&weights, &means);
    if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(CtdError::NonFinite("ridge solve"));
    }
    Ok(LinearModel {
        kind: ModelKind::Ridge,
        dim,
        weights,
        intercept,
        train_config: cfg.clone(),
    })
}

fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = gram.nrows();
    if dim == 0 {
        return Ok(DVector::zeros(0));
    }
    let max_diag = gram.diagonal().iter().cloned().fold(0.0f64, f64::max);
    let chol = gram
        .cholesky()
        .ok_or_else(|| CtdError::Singular("normal equations are not positive definite".into()))?;
    let min_pivot = chol.l_dirty().diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
    if min_pivot * min_pivot <= 1e-13 * max_diag.max(f64::MIN_POSITIVE) {
        return Err(CtdError::Singular("normal equations are rank deficient".into()));
    }
    Ok(chol.solve(rhs))
}

/// DV score `w . z + b`.
pub fn score_dv(model: &LinearModel, x: &Example) -> Result<f64> {
    if model.kind != ModelKind::Ridge {
        return Err(CtdError::invalid("model", "DV probe must be ridge"));
    }
    model.linear(&x.features)
}

/// Sorted reference probe scores defining the empirical CDF of the
/// uncertainty baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReference {
    sorted: Vec<f64>,
}

impl UncertaintyReference {
    pub fn new(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(CtdError::invalid("uncertainty reference", "empty reference set"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(CtdError::invalid("uncertainty reference", "non-finite score"));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self { sorted: scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.sorted
    }

    pub fn signal(&self, probe_score: f64) -> f64 {
        uncertainty_signal(probe_score, &self.sorted).expect("reference is non-empty")
    }
}

/// `-|F(p) - 0.5|` with the right-continuous empirical CDF of
/// `reference_scores` (which must be sorted ascending).
pub fn uncertainty_signal(probe_score: f64, reference_scores: &[f64]) -> Result<f64> {
    if reference_scores.is_empty() {
        return Err(CtdError::invalid("uncertainty reference", "empty reference set"));
    }
    let below = reference_scores.partition_point(|&s| s <= probe_score);
    let cdf = below as f64 / reference_scores.len() as f64;
    Ok(-(cdf - 0.5).abs())
}

//! Examples, JSONL ingestion and deterministic splitting.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CtdError, Result};

/// One labelled datapoint.
///
/// `features` is the latent representation the probes read. Precomputed
/// `probe_score` / `expert_score` values, when present, take precedence over
/// anything a model would compute for that role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub group: String,
    pub label: u8,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_score: Option<f64>,
}

impl Example {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.label > 1 {
            return Err("label outside {0,1}".into());
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err("non-finite feature".into());
        }
        for (name, score) in [("probe_score", self.probe_score), ("expert_score", self.expert_score)] {
            if let Some(s) = score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(format!("{name} {s} outside [0,1]"));
                }
            }
        }
        Ok(())
    }
}

// Wider label type so out-of-range labels are reported as such rather than
// as a generic type error.
#[derive(Deserialize)]
struct RawRecord {
    id: String,
    group: String,
    label: i64,
    features: Vec<f64>,
    #[serde(default)]
    probe_score: Option<f64>,
    #[serde(default)]
    expert_score: Option<f64>,
}

/// Parse JSONL text. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<Example>> {
    let mut out: Vec<Example> = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CtdError::Parse { line: lineno, message };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if !(0..=1).contains(&raw.label) {
            return Err(parse_err("label outside {0,1}".into()));
        }
        let ex = Example {
            id: raw.id,
            group: raw.group,
            label: raw.label as u8,
            features: raw.features,
            probe_score: raw.probe_score,
            expert_score: raw.expert_score,
        };
        ex.validate().map_err(parse_err)?;
        match dim {
            None => dim = Some(ex.dim()),
            Some(d) if d != ex.dim() => {
                return Err(parse_err(format!(
                    "feature dimension {} does not match {}",
                    ex.dim(),
                    d
                )))
            }
            Some(_) => {}
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CtdError::io(path, e))?;
    parse_jsonl(&text)
}

pub fn to_jsonl(examples: &[Example]) -> Result<String> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(examples)?).map_err(|e| CtdError::io(path, e))
}

/// Split fractions.
///
/// `dev + calibration + evaluation` must sum to one. `est` is the share of
/// the calibration side routed to the estimation split; the remainder
/// becomes the hypothesis-testing split. A `dev` fraction of zero is allowed
/// for pipelines that supply the DV training data separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dev: f64,
    pub calibration: f64,
    pub evaluation: f64,
    pub est: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            dev: 0.3,
            calibration: 0.35,
            evaluation: 0.35,
            est: 0.3,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !(self.dev >= 0.0 && self.dev < 1.0) {
            return Err(CtdError::invalid("split", format!("dev fraction {} outside [0,1)", self.dev)));
        }
        for (name, f) in [("calibration", self.calibration), ("evaluation", self.evaluation), ("est", self.est)] {
            if !open(f) {
                return Err(CtdError::invalid("split", format!("{name} fraction {f} outside (0,1)")));
            }
        }
        let total = self.dev + self.calibration + self.evaluation;
        if (total - 1.0).abs() > 1e-9 {
            return Err(CtdError::invalid("split", format!("fractions sum to {total}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub dev: Vec<T>,
    pub est: Vec<T>,
    pub cal: Vec<T>,
    pub eval: Vec<T>,
}

/// Shuffle with `spec.seed` and cut into dev / est / cal / eval.
///
/// Sizes use floor on every split but the last of each level; the last
/// takes the remainder, so the partition is exhaustive.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<Partition<T>> {
    spec.validate()?;
    if items.is_empty() {
        return Err(CtdError::invalid("split", "no examples"));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let n_dev = (spec.dev * n as f64).floor() as usize;
    let n_calib = (spec.calibration * n as f64).floor() as usize;
    let n_eval = n - n_dev - n_calib;
    let n_est = (spec.est * n_calib as f64).floor() as usize;
    let n_cal = n_calib - n_est;

    if spec.dev > 0.0 && n_dev == 0 {
        return Err(CtdError::EmptySplit("dev"));
    }
    for (name, size) in [("evaluation", n_eval), ("est", n_est), ("cal", n_cal)] {
        if size == 0 {
            return Err(CtdError::EmptySplit(name));
        }
    }

    let pick = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| items[i].clone()).collect()
    };
    Ok(Partition {
        dev: pick(0..n_dev),
        est: pick(n_dev..n_dev + n_est),
        cal: pick(n_dev + n_est..n_dev + n_calib),
        eval: pick(n_dev + n_calib..n),
    })
}

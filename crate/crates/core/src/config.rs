//! Flat key-value configuration files.
//!
//! ```text
//! # comment
//! seed = 7
//! synth.preset = weak_expert
//! synth.groups.chat.expert_skill = 1.5
//! sweep.budgets = 0.1, 0.2, 0.5
//! ```
//!
//! One `key = value` per line; list values are comma separated; values may
//! be wrapped in double quotes. Keys are unique and line order carries no
//! meaning (groups are ordered by name). Unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{Example, SplitSpec};
use crate::error::{CtdError, Result};
use crate::harness::{CoverageConfig, DvSource, Pipeline, Strategy, SweepConfig};
use crate::probes::{train_logistic, DvTarget, LinearModel, TrainConfig};
use crate::synth::{generate, generate_draw, GroupConfig, SynthConfig};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| CtdError::Parse {
                line: idx + 1,
                message: message.to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
                return Err(err("invalid key"));
            }
            let mut value = value.trim();
            if let Some(inner) = value.strip_prefix('"') {
                value = inner.strip_suffix('"').ok_or_else(|| err("unterminated quote"))?;
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(err("duplicate key"));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| CtdError::io(path, e))?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get_str(key)
            .map(|v| {
                v.parse::<T>().map_err(|_| CtdError::Config {
                    key: key.to_string(),
                    message: format!("cannot parse `{v}`"),
                })
            })
            .transpose()
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get_str(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|item| {
                        item.parse::<T>().map_err(|_| CtdError::Config {
                            key: key.to_string(),
                            message: format!("cannot parse list item `{item}`"),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "synth.preset",
    "synth.dim",
    "synth.label_prior",
    "synth.group_offset",
    "split.dev",
    "split.calibration",
    "split.evaluation",
    "split.est",
    "probe.l2_strength",
    "probe.max_iters",
    "probe.tolerance",
    "dv.l2_strength",
    "dv.standardize",
    "dv.target",
    "sweep.budgets",
    "sweep.delta",
    "sweep.batch_sizes",
    "sweep.strategies",
    "sweep.loss",
    "sweep.grid_size",
    "coverage.alpha",
    "coverage.trials",
    "coverage.variant",
    "coverage.retrain_dv",
    "group.alpha",
    "group.batch_size",
];

const GROUP_FIELDS: &[&str] = &["n", "class_separation", "expert_skill", "expert_noise"];

/// Everything one experiment needs, resolved from a [`Config`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub probe_train: TrainConfig,
    pub dv_train: TrainConfig,
    pub dv_target: DvTarget,
    pub sweep: SweepConfig,
    pub coverage: CoverageConfig,
    pub group_alpha: f64,
    pub group_batch_size: usize,
}

impl ExperimentConfig {
    /// Defaults for a preset and seed, without reading any file.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let mut c = Config::default();
        c.set("synth.preset", name);
        c.set("seed", seed.to_string());
        Self::from_config(&c)
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        for key in c.keys() {
            let group_key = key
                .strip_prefix("synth.groups.")
                .and_then(|rest| rest.rsplit_once('.'))
                .is_some_and(|(name, field)| !name.is_empty() && GROUP_FIELDS.contains(&field));
            if !group_key && !KNOWN_KEYS.contains(&key) {
                return Err(CtdError::Config {
                    key: key.to_string(),
                    message: "unknown key".into(),
                });
            }
        }
        let seed: u64 = c.get("seed")?.unwrap_or(0);

        let preset = c.get_str("synth.preset").unwrap_or("strong_expert");
        let mut synth = SynthConfig::preset(preset, seed)?;
        if let Some(d) = c.get("synth.dim")? {
            synth.dim = d;
        }
        if let Some(p) = c.get("synth.label_prior")? {
            synth.label_prior = p;
        }
        if let Some(o) = c.get("synth.group_offset")? {
            synth.group_offset = o;
        }
        let mut groups: BTreeMap<String, GroupConfig> =
            synth.groups.drain(..).map(|g| (g.name.clone(), g)).collect();
        let overridden: BTreeSet<&str> = c
            .keys()
            .filter_map(|k| k.strip_prefix("synth.groups."))
            .filter_map(|rest| rest.rsplit_once('.').map(|(n, _)| n))
            .collect();
        for name in overridden {
            let g = groups.entry(name.to_string()).or_insert_with(|| GroupConfig {
                name: name.to_string(),
                n: 1000,
                class_separation: 2.0,
                expert_skill: 2.0,
                expert_noise: 1.0,
            });
            let key = |f: &str| format!("synth.groups.{name}.{f}");
            if let Some(v) = c.get(&key("n"))? {
                g.n = v;
            }
            if let Some(v) = c.get(&key("class_separation"))? {
                g.class_separation = v;
            }
            if let Some(v) = c.get(&key("expert_skill"))? {
                g.expert_skill = v;
            }
            if let Some(v) = c.get(&key("expert_noise"))? {
                g.expert_noise = v;
            }
        }
        synth.groups = groups.into_values().collect();
        synth.validate()?;

        let mut split = SplitSpec { seed, ..SplitSpec::default() };
        if let Some(v) = c.get("split.dev")? {
            split.dev = v;
        }
        if let Some(v) = c.get("split.calibration")? {
            split.calibration = v;
        }
        if let Some(v) = c.get("split.evaluation")? {
            split.evaluation = v;
        }
        if let Some(v) = c.get("split.est")? {
            split.est = v;
        }
        split.validate()?;

        let mut probe_train = TrainConfig { seed, ..TrainConfig::logistic_default() };
        if let Some(v) = c.get("probe.l2_strength")? {
            probe_train.l2_strength = v;
        }
        if let Some(v) = c.get("probe.max_iters")? {
            probe_train.max_iters = v;
        }
        if let Some(v) = c.get("probe.tolerance")? {
            probe_train.tolerance = v;
        }
        probe_train.validate()?;

        let mut dv_train = TrainConfig { seed, ..TrainConfig::ridge_default() };
        if let Some(v) = c.get("dv.l2_strength")? {
            dv_train.l2_strength = v;
        }
        if let Some(v) = c.get("dv.standardize")? {
            dv_train.standardize = v;
        }
        dv_train.validate()?;
        let dv_target = c.get("dv.target")?.unwrap_or_default();

        let mut sweep = SweepConfig { seed, ..SweepConfig::default() };
        if let Some(v) = c.get_list("sweep.budgets")? {
            sweep.budgets = v;
        }
        if let Some(v) = c.get("sweep.delta")? {
            sweep.delta = v;
        }
        if let Some(v) = c.get_list("sweep.batch_sizes")? {
            sweep.batch_sizes = v;
        }
        if let Some(v) = c.get_list::<Strategy>("sweep.strategies")? {
            sweep.strategies = v;
        }
        if let Some(v) = c.get("sweep.loss")? {
            sweep.loss_kind = v;
        }
        if let Some(v) = c.get("sweep.grid_size")? {
            sweep.grid_size = v;
        }
        sweep.validate()?;

        let mut coverage = CoverageConfig {
            seed,
            delta: sweep.delta,
            loss_kind: sweep.loss_kind,
            grid_size: sweep.grid_size,
            ..CoverageConfig::default()
        };
        if let Some(v) = c.get("coverage.alpha")? {
            coverage.alpha = v;
        }
        if let Some(v) = c.get("coverage.trials")? {
            coverage.trials = v;
        }
        if let Some(v) = c.get("coverage.variant")? {
            coverage.variant = v;
        }
        if let Some(v) = c.get("coverage.retrain_dv")? {
            coverage.retrain_dv = v;
        }

        Ok(Self {
            seed,
            synth,
            split,
            probe_train,
            dv_train,
            dv_target,
            sweep,
            coverage,
            group_alpha: c.get("group.alpha")?.unwrap_or(0.2),
            group_batch_size: c.get("group.batch_size")?.unwrap_or(128),
        })
    }

    /// Replace every seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.split.seed = seed;
        self.probe_train.seed = seed;
        self.dv_train.seed = seed;
        self.sweep.seed = seed;
        self.coverage.seed = seed;
        self
    }

    pub fn dv_source(&self) -> DvSource {
        DvSource::Train {
            config: self.dv_train.clone(),
            target: self.dv_target,
        }
    }

    /// Independent draw from the same population, used to fit the safety probe.
    pub fn probe_training_set(&self) -> Result<Vec<Example>> {
        generate_draw(&self.synth, 1)
    }

    pub fn train_probe(&self) -> Result<LinearModel> {
        Ok(train_logistic(&self.probe_training_set()?, &self.probe_train)?.model)
    }

    /// Generate data, fit the safety probe and the DV probe, split.
    pub fn synthetic_pipeline(&self) -> Result<Pipeline> {
        let probe = self.train_probe()?;
        let data = generate(&self.synth)?;
        Pipeline::build(Some(&probe), &data, &self.split, &self.dv_source())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let c = Config::parse("# hi\n\nseed = 3\nsweep.budgets = 0.1, 0.2 ,0.5\nsynth.preset = \"weak_expert\"\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(3));
        assert_eq!(c.get_list::<f64>("sweep.budgets").unwrap(), Some(vec![0.1, 0.2, 0.5]));
        assert_eq!(c.get_str("synth.preset"), Some("weak_expert"));
        assert_eq!(c.get::<u64>("missing").unwrap(), None);
    }

    #[test]
    fn parse_errors_carry_lines() {
        assert!(matches!(Config::parse("seed 3"), Err(CtdError::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("a = 1\na = 2"), Err(CtdError::Parse { line: 2, .. })));
        assert!(matches!(Config::parse("x = \"open"), Err(CtdError::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("bad key = 1"), Err(CtdError::Parse { .. })));
        let c = Config::parse("seed = many").unwrap();
        assert!(matches!(c.get::<u64>("seed"), Err(CtdError::Config { .. })));
    }

    #[test]
    fn experiment_from_config() {
        let text = "seed = 9\nsynth.preset = weak_expert\nsynth.groups.chat.expert_skill = 3.5\n\
                    synth.groups.extra.n = 50\nsweep.strategies = ctd, oracle_topk\nsweep.loss = auroc_error\n\
                    dv.target = binary\ncoverage.variant = budget_only\nsplit.dev = 0.2\nsplit.calibration = 0.4\nsplit.evaluation = 0.4\n";
        let e = ExperimentConfig::from_config(&Config::parse(text).unwrap()).unwrap();
        assert_eq!(e.synth.seed, 9);
        assert_eq!(e.synth.groups.len(), 5);
        let chat = e.synth.groups.iter().find(|g| g.name == "chat").unwrap();
        assert_eq!(chat.expert_skill, 3.5);
        assert_eq!(e.synth.groups.iter().find(|g| g.name == "extra").unwrap().n, 50);
        assert_eq!(e.sweep.strategies, vec![Strategy::Ctd, Strategy::OracleTopk]);
        assert_eq!(e.dv_target, DvTarget::Binary);
        assert_eq!(e.split.dev, 0.2);
        assert_eq!(e.coverage.loss_kind, crate::risk::LossKind::AurocError);
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        let c = Config::parse("sweep.colour = red").unwrap();
        assert!(matches!(ExperimentConfig::from_config(&c), Err(CtdError::Config { .. })));
        let c = Config::parse("synth.groups.chat.flavour = 1").unwrap();
        assert!(ExperimentConfig::from_config(&c).is_err());
        let c = Config::parse("split.dev = 0.9").unwrap();
        assert!(ExperimentConfig::from_config(&c).is_err());
        let c = Config::parse("sweep.budgets = 0.5, 1.5").unwrap();
        assert!(ExperimentConfig::from_config(&c).is_err());
    }
}

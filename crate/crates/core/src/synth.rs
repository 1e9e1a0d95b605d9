//! Synthetic datasets with a controllable expert.
//!
//! Each group has its own class direction and centroid direction, drawn
//! orthonormally from a seeded Gaussian matrix. Features are
//! `offset * c_g + (2y - 1) * (sep / 2) * u_g + N(0, I)`. The expert is a
//! noisy label channel on the logit scale: `sigmoid(skill * (2y - 1) + noise)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::error::{CtdError, Result};
use crate::probes::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub name: String,
    pub n: usize,
    /// Distance between the two class means.
    pub class_separation: f64,
    /// Logit-scale expert signal; negative means worse than chance.
    pub expert_skill: f64,
    /// Std of the expert's logit noise.
    pub expert_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub groups: Vec<GroupConfig>,
    pub label_prior: f64,
    /// Distance of each group's centroid from the origin (0 puts all groups
    /// on top of each other).
    pub group_offset: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(CtdError::invalid("synth config", "dim must be at least 1"));
        }
        if self.groups.is_empty() {
            return Err(CtdError::invalid("synth config", "at least one group required"));
        }
        if !(self.label_prior > 0.0 && self.label_prior < 1.0) {
            return Err(CtdError::invalid("synth config", "label_prior must lie in (0,1)"));
        }
        if !(self.group_offset >= 0.0 && self.group_offset.is_finite()) {
            return Err(CtdError::invalid("synth config", "group_offset must be finite and >= 0"));
        }
        for g in &self.groups {
            if g.n == 0 {
                return Err(CtdError::invalid("synth config", format!("group {} has n = 0", g.name)));
            }
            if !(g.class_separation >= 0.0 && g.class_separation.is_finite()) {
                return Err(CtdError::invalid("synth config", format!("group {} class_separation", g.name)));
            }
            if !(g.expert_noise >= 0.0 && g.expert_noise.is_finite()) || !g.expert_skill.is_finite() {
                return Err(CtdError::invalid("synth config", format!("group {} expert parameters", g.name)));
            }
        }
        Ok(())
    }

    /// Expert skill at least 2 everywhere. `chat` has weak class separation
    /// so the probe struggles there; `clinical` and `tools` have noisy experts,
    /// so probe uncertainty alone overstates their delegation value.
    pub fn strong_expert(seed: u64) -> Self {
        Self {
            dim: 16,
            groups: vec![
                group("chat", 1000, 0.5, 4.0, 1.0),
                group("clinical", 1000, 2.0, 2.0, 5.0),
                group("dialogue", 1000, 2.0, 4.0, 1.0),
                group("tools", 1000, 2.0, 2.0, 2.0),
            ],
            label_prior: 0.5,
            group_offset: 3.0,
            seed,
        }
    }

    /// Expert worse than chance on most groups; only `chat` benefits from delegation.
    pub fn weak_expert(seed: u64) -> Self {
        Self {
            dim: 16,
            groups: vec![
                group("chat", 1000, 1.0, 2.0, 1.0),
                group("clinical", 1000, 2.0, -3.0, 1.0),
                group("dialogue", 1000, 2.0, -1.5, 1.0),
                group("tools", 1000, 2.0, -0.3, 1.0),
            ],
            label_prior: 0.5,
            group_offset: 3.0,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "strong_expert" => Ok(Self::strong_expert(seed)),
            "weak_expert" => Ok(Self::weak_expert(seed)),
            other => Err(CtdError::invalid("preset", format!("unknown preset `{other}`"))),
        }
    }
}

fn group(name: &str, n: usize, sep: f64, skill: f64, noise: f64) -> GroupConfig {
    GroupConfig {
        name: name.into(),
        n,
        class_separation: sep,
        expert_skill: skill,
        expert_noise: noise,
    }
}

/// Orthonormal columns from the QR factorisation of a seeded Gaussian matrix.
fn orthonormal_basis(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    m.qr().q()
}

/// Generate examples group by group. Group `g` draws from its own ChaCha
/// stream, so adding noise parameters to one group leaves the others intact.
pub fn generate(config: &SynthConfig) -> Result<Vec<Example>> {
    generate_draw(config, 0)
}

/// An independent sample from the same population as [`generate`]: the
/// latent directions come from `config.seed`, the samples from stream
/// `draw`. Draw 0 is [`generate`]; other draws tag their ids with `d{draw}`.
pub fn generate_draw(config: &SynthConfig, draw: u32) -> Result<Vec<Example>> {
    config.validate()?;
    let dim = config.dim;
    let n_groups = config.groups.len();
    let mut base_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let basis = orthonormal_basis(dim, &mut base_rng);

    let mut out = Vec::with_capacity(config.groups.iter().map(|g| g.n).sum());
    for (gi, g) in config.groups.iter().enumerate() {
        let class_dir = basis.column(gi % dim);
        let centroid_dir = basis.column((n_groups + gi) % dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(((draw as u64) << 32) | (gi as u64 + 1));
        let half_sep = g.class_separation / 2.0;
        for i in 0..g.n {
            let label = u8::from(rng.gen::<f64>() < config.label_prior);
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let features: Vec<f64> = (0..dim)
                .map(|j| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    config.group_offset * centroid_dir[j] + sign * half_sep * class_dir[j] + noise
                })
                .collect();
            let logit_noise: f64 = StandardNormal.sample(&mut rng);
            let expert = sigmoid(g.expert_skill * sign + g.expert_noise * logit_noise);
            out.push(Example {
                id: if draw == 0 {
                    format!("{}-{:05}", g.name, i)
                } else {
                    format!("{}-d{}-{:05}", g.name, draw, i)
                },
                group: g.name.clone(),
                label,
                features,
                probe_score: None,
                expert_score: Some(expert),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(sep: f64, skill: f64, noise: f64, n: usize) -> SynthConfig {
        SynthConfig {
            dim: 4,
            groups: vec![group("g", n, sep, skill, noise)],
            label_prior: 0.5,
            group_offset: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn zero_skill_zero_noise_is_half() {
        for ex in generate(&single(1.0, 0.0, 0.0, 50)).unwrap() {
            assert_eq!(ex.expert_score, Some(0.5));
        }
    }

    #[test]
    fn noiseless_expert_is_closed_form() {
        let hi = 1.0 / (1.0 + (-4.0f64).exp());
        for ex in generate(&single(1.0, 4.0, 0.0, 50)).unwrap() {
            let s = ex.expert_score.unwrap();
            if ex.label == 1 {
                assert!((s - 0.98201379).abs() < 1e-6 && (s - hi).abs() < 1e-15);
            } else {
                assert!((s - 0.01798621).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn expert_sign_follows_skill() {
        for skill in [-2.0, 3.0] {
            for ex in generate(&single(1.0, skill, 0.0, 40)).unwrap() {
                let s = ex.expert_score.unwrap() - 0.5;
                let expected = skill * if ex.label == 1 { 1.0 } else { -1.0 };
                assert_eq!(s.signum(), expected.signum());
            }
        }
    }

    #[test]
    fn label_balance_within_three_sd() {
        let mut cfg = SynthConfig::strong_expert(3);
        cfg.label_prior = 0.3;
        let data = generate(&cfg).unwrap();
        for g in &cfg.groups {
            let labels: Vec<u8> = data.iter().filter(|e| e.group == g.name).map(|e| e.label).collect();
            let freq = labels.iter().map(|&l| l as f64).sum::<f64>() / labels.len() as f64;
            let sd = (0.3 * 0.7 / labels.len() as f64).sqrt();
            assert!((freq - 0.3).abs() <= 3.0 * sd, "group {} freq {freq}", g.name);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&SynthConfig::weak_expert(5)).unwrap();
        assert_eq!(a, generate(&SynthConfig::weak_expert(5)).unwrap());
        assert_ne!(a, generate(&SynthConfig::weak_expert(6)).unwrap());
        assert_eq!(a.len(), 4000);
        assert!(a.iter().all(|e| e.dim() == 16 && e.probe_score.is_none()));
    }

    #[test]
    fn draws_share_population_not_samples() {
        let cfg = SynthConfig::strong_expert(3);
        let a = generate(&cfg).unwrap();
        let b = generate_draw(&cfg, 1).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a[0].features, b[0].features);
        assert!(b[0].id.starts_with("chat-d1-"));
        // Class means along the same direction agree across draws.
        let mean_diff = |xs: &[Example]| -> Vec<f64> {
            let chat: Vec<_> = xs.iter().filter(|e| e.group == "chat").collect();
            let mut d = vec![0.0; cfg.dim];
            for e in &chat {
                let s = if e.label == 1 { 1.0 } else { -1.0 };
                for (dj, x) in d.iter_mut().zip(&e.features) {
                    *dj += s * x / chat.len() as f64;
                }
            }
            d
        };
        let (da, db) = (mean_diff(&a), mean_diff(&b));
        let dot: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
        assert!(dot > 0.0);
    }

    #[test]
    fn zero_separation_has_no_class_signal() {
        let data = generate(&single(0.0, 1.0, 1.0, 4000)).unwrap();
        // Class-conditional means coincide up to sampling error.
        for j in 0..4 {
            let mean = |lab: u8| {
                let v: Vec<f64> = data.iter().filter(|e| e.label == lab).map(|e| e.features[j]).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            assert!((mean(1) - mean(0)).abs() < 0.15);
        }
    }

    #[test]
    fn presets_match_their_regimes() {
        let strong = SynthConfig::strong_expert(0);
        assert!(strong.groups.iter().all(|g| g.expert_skill >= 2.0));
        let weak = SynthConfig::weak_expert(0);
        let negative = weak.groups.iter().filter(|g| g.expert_skill < 0.0).count();
        assert!(negative * 2 > weak.groups.len() && negative < weak.groups.len());
        assert!(SynthConfig::preset("nope", 0).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = single(1.0, 1.0, 1.0, 10);
        cfg.dim = 0;
        assert!(generate(&cfg).is_err());
        let mut cfg = single(1.0, 1.0, -1.0, 10);
        assert!(generate(&cfg).is_err());
        cfg.groups.clear();
        assert!(generate(&cfg).is_err());
    }
}

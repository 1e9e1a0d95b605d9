//! Reference implementations used as test oracles. Each one is written
//! independently of the library code it checks.

#![allow(dead_code)]

use ctd::dataset::Example;
use ctd::probes::{delegation_value, logistic_gradient, logistic_objective};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

/// Exact `P(Bin(n, num/den) <= k)` by term-by-term rational summation.
pub fn binomial_cdf_exact(k: u64, n: u64, num: i64, den: i64) -> BigRational {
    let a = BigRational::new(BigInt::from(num), BigInt::from(den));
    let q = BigRational::one() - &a;
    let mut total = BigRational::zero();
    let mut choose = BigInt::one();
    for i in 0..=k.min(n) {
        if i > 0 {
            choose = choose * BigInt::from(n - i + 1) / BigInt::from(i);
        }
        let term = BigRational::from_integer(choose.clone()) * pow(&a, i) * pow(&q, n - i);
        total += term;
    }
    total
}

fn pow(x: &BigRational, e: u64) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * x)
}

/// `|approx - exact| <= tol * |exact|`, evaluated in exact arithmetic.
pub fn within_relative(approx: f64, exact: &BigRational, tol: f64) -> bool {
    let Some(a) = BigRational::from_float(approx) else {
        return false;
    };
    let t = BigRational::from_float(tol).unwrap();
    (a - exact).abs() <= t * exact.abs()
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// AUROC by counting every positive/negative pair; ties count one half.
pub fn auroc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins2, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1;
            wins2 += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    wins2 as f64 / (2 * pairs) as f64
}

/// Random examples with both scores set, for DV and probe fits.
pub fn random_examples(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let label = u8::from(rng.gen::<bool>());
            let shift = if label == 1 { 0.7 } else { -0.7 };
            Example {
                id: format!("r{i}"),
                group: "g".into(),
                label,
                features: (0..dim).map(|_| rng.gen_range(-2.0..2.0) + shift).collect(),
                probe_score: Some(rng.gen_range(0.01..0.99)),
                expert_score: Some(rng.gen_range(0.01..0.99)),
            }
        })
        .collect()
}

/// Relative residual of the centred ridge normal equations
/// `(Zc^T Zc + gamma I) w = Zc^T vc`, computed with plain loops.
pub fn ridge_residual(data: &[Example], weights: &[f64], gamma: f64) -> f64 {
    let n = data.len();
    let dim = weights.len();
    let v: Vec<f64> = data
        .iter()
        .map(|e| delegation_value(e.probe_score.unwrap(), e.expert_score.unwrap(), e.label))
        .collect();
    let v_mean = v.iter().sum::<f64>() / n as f64;
    let mean: Vec<f64> = (0..dim).map(|j| data.iter().map(|e| e.features[j]).sum::<f64>() / n as f64).collect();
    let zc: Vec<Vec<f64>> = data
        .iter()
        .map(|e| e.features.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut lhs = vec![0.0; dim];
    let mut rhs = vec![0.0; dim];
    for (row, vi) in zc.iter().zip(&v) {
        let fit: f64 = row.iter().zip(weights).map(|(a, b)| a * b).sum();
        for j in 0..dim {
            lhs[j] += row[j] * fit;
            rhs[j] += row[j] * (vi - v_mean);
        }
    }
    for j in 0..dim {
        lhs[j] += gamma * weights[j];
    }
    let res = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    res / (1.0 + scale)
}

/// Worst relative gap between the analytic logistic gradient and central
/// differences of the objective.
pub fn logistic_fd_gap(data: &[Example], weights: &[f64], intercept: f64, l2: f64) -> f64 {
    let analytic = logistic_gradient(weights, intercept, data, l2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for j in 0..=weights.len() {
        let eval = |d: f64| {
            let mut w = weights.to_vec();
            let mut b = intercept;
            if j < w.len() {
                w[j] += d;
            } else {
                b += d;
            }
            logistic_objective(&w, b, data, l2)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let gap = (fd - analytic[j]).abs() / analytic[j].abs().max(1e-3);
        worst = worst.max(gap);
    }
    worst
}

#![allow(dead_code)]

use patternkit_core::mechanism::{gen_predictors, Delta, Formulation, GenConfig};
use patternkit_core::rng::SimRng;
use patternkit_core::{Dataset, PatternId};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn equicorrelated(p: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

pub fn gen_config(n: usize, p: usize) -> GenConfig {
    GenConfig {
        n,
        mu: vec![1.0; p],
        sigma: equicorrelated(p, 0.3),
        beta: (0..=p).map(|j| 1.0 + j as f64).collect(),
        delta: Delta::default(),
        noise_sd: 1.0,
        formulation: Formulation::Selection,
    }
}

/// `n` rows spread evenly over `patterns` (shuffled), outcome linear in the
/// true covariates plus a pattern-specific shift and unit noise.
pub fn patterned_dataset(rng: &mut SimRng, p: usize, n: usize, patterns: &[PatternId]) -> Dataset {
    let cfg = gen_config(n, p);
    let x = gen_predictors(&cfg, rng).unwrap();
    let mut assignment: Vec<PatternId> = (0..n).map(|i| patterns[i % patterns.len()]).collect();
    assignment.shuffle(rng);
    let y: Vec<f64> = x
        .iter()
        .zip(&assignment)
        .map(|(row, pat)| {
            cfg.linear_mean(row) + 0.7 * pat.n_missing() as f64 + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let rows = x
        .iter()
        .zip(&assignment)
        .map(|(row, pat)| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| (!pat.is_missing(j)).then_some(v))
                .collect()
        })
        .collect();
    Dataset::with_default_names(y, rows, p).unwrap()
}

/// The complete pattern plus every single-column-missing pattern.
pub fn single_missing_patterns(p: usize) -> Vec<PatternId> {
    std::iter::once(PatternId::COMPLETE)
        .chain((0..p).map(|j| PatternId(1 << j)))
        .collect()
}

pub fn all_patterns(p: usize) -> Vec<PatternId> {
    (0..1u64 << p).map(PatternId).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

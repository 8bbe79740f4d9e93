//! A synthetic clinical-style dataset: ten physiology covariates, five of which
//! go missing in 23 fixed combinations of very different sizes, including
//! several below the sparse-pattern threshold.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::Result;
use crate::rng::rng_from_seed;

pub const COLUMNS: [&str; 10] = [
    "pafi", "meanbp", "wblc", "alb", "resp", "temp", "hrt", "bili", "crea", "sod",
];

const MEANS: [f64; 10] = [240.0, 85.0, 12.0, 3.0, 24.0, 37.5, 98.0, 2.2, 1.8, 137.0];
const SDS: [f64; 10] = [110.0, 27.0, 9.0, 0.8, 9.5, 1.2, 31.0, 4.5, 1.6, 6.0];
/// Outcome slopes per standardized covariate.
const SLOPES: [f64; 10] = [-6.0, -4.0, 3.0, -5.0, 2.0, 1.0, 2.0, 4.0, 5.0, -2.0];
const INTERCEPT: f64 = 40.0;
const NOISE_SD: f64 = 10.0;

/// Seed of the copy shipped as `data/support_like.csv`.
pub const DEFAULT_SEED: u64 = 2024;

/// Missing-column sets (by column name) and their row counts.
const PATTERNS: [(&[&str], usize); 23] = [
    (&[], 1500),
    (&["alb", "bili"], 500),
    (&["pafi"], 400),
    (&["pafi", "alb", "bili"], 350),
    (&["alb"], 150),
    (&["bili"], 150),
    (&["wblc"], 60),
    (&["crea"], 60),
    (&["pafi", "alb"], 120),
    (&["pafi", "bili"], 120),
    (&["alb", "bili", "crea"], 80),
    (&["pafi", "alb", "bili", "crea"], 60),
    (&["wblc", "alb", "bili"], 50),
    (&["pafi", "wblc"], 40),
    (&["alb", "crea"], 40),
    (&["bili", "crea"], 35),
    (&["pafi", "crea"], 30),
    (&["wblc", "alb"], 25),
    (&["pafi", "wblc", "alb", "bili"], 20),
    (&["wblc", "bili"], 15),
    (&["pafi", "wblc", "alb", "bili", "crea"], 12),
    (&["wblc", "crea"], 10),
    (&["pafi", "alb", "crea"], 8),
];

fn column_index(name: &str) -> usize {
    COLUMNS.iter().position(|c| *c == name).expect("known column")
}

/// Number of rows produced by [`support_like`].
pub fn support_like_rows() -> usize {
    PATTERNS.iter().map(|(_, n)| n).sum()
}

/// Generate the dataset. Covariates are correlated normals (correlation
/// `0.4^|i-j|` on the standardized scale), rounded to two decimals; the
/// outcome `score` is linear in the standardized covariates plus noise.
/// Pattern membership is assigned at random with the fixed counts above.
pub fn support_like(seed: u64) -> Result<Dataset> {
    let mut rng = rng_from_seed(seed);
    let p = COLUMNS.len();
    let corr = DMatrix::from_fn(p, p, |i, j| 0.4f64.powi((i as i32 - j as i32).abs()));
    let l = corr.cholesky().expect("positive definite").l();

    let mut missing_sets: Vec<&[&str]> = PATTERNS
        .iter()
        .flat_map(|(cols, n)| std::iter::repeat_n(*cols, *n))
        .collect();
    missing_sets.shuffle(&mut rng);

    let mut y = Vec::with_capacity(missing_sets.len());
    let mut rows = Vec::with_capacity(missing_sets.len());
    for missing in missing_sets {
        let z = &l * DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise: f64 = rng.sample(StandardNormal);
        y.push(round2(
            INTERCEPT + z.iter().zip(&SLOPES).map(|(a, b)| a * b).sum::<f64>() + NOISE_SD * noise,
        ));
        let mut row: Vec<Option<f64>> = (0..p).map(|j| Some(round2(MEANS[j] + SDS[j] * z[j]))).collect();
        for name in missing {
            row[column_index(name)] = None;
        }
        rows.push(row);
    }
    Dataset::new("score", COLUMNS.iter().map(|s| s.to_string()).collect(), y, rows)
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Add `shift` to the response of every row missing `column`.
pub fn shift_when_missing(ds: &Dataset, column: usize, shift: f64) -> Dataset {
    ds.map_response(|_, y, row| if row[column].is_none() { y + shift } else { y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::partition;

    #[test]
    fn twenty_three_patterns_with_fixed_counts() {
        let ds = support_like(1).unwrap();
        assert_eq!(ds.n(), support_like_rows());
        assert_eq!(ds.p(), 10);
        let idx = partition(&ds);
        assert_eq!(idx.len(), 23);
        let mut sizes: Vec<usize> = idx.iter().map(|(_, r)| r.len()).collect();
        sizes.sort_unstable();
        let mut expected: Vec<usize> = PATTERNS.iter().map(|(_, n)| *n).collect();
        expected.sort_unstable();
        assert_eq!(sizes, expected);
        assert_eq!(ds.columns_with_missing(), vec![0, 2, 3, 7, 8]);
    }

    #[test]
    fn shift_applies_to_missing_group_only() {
        let ds = support_like(2).unwrap();
        let shifted = shift_when_missing(&ds, 0, 25.0);
        for i in 0..ds.n() {
            let d = shifted.y()[i] - ds.y()[i];
            let expected = if ds.is_missing(i, 0) { 25.0 } else { 0.0 };
            assert!((d - expected).abs() < 1e-9);
        }
    }
}

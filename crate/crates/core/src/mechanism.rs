//! Synthetic predictors, missingness masks and outcomes.
//!
//! Predictors are multivariate normal. Each [`MechanismSpec`] masks one column
//! with probability `expit(nu0 + term)`, where the term depends on the kind:
//!
//! | kind  | term                                         |
//! |-------|----------------------------------------------|
//! | MCAR  | 0                                            |
//! | MAR   | `nu2 * x[driver]`                            |
//! | MNAR  | `nu1 * x[target]`                            |
//! | MARY  | `nu2y * composite(y, x[driver])`             |
//! | MNARY | `nu1y * composite(y, x[target])`             |
//!
//! with `composite(y, x) = (y / sd(y) + x) / sqrt(2 (1 + cor(y, x)))` computed
//! from sample statistics. `nu0` is calibrated so the marginal missingness
//! probability hits `target_prob`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{default_names, Dataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub const CALIBRATION_ROWS: usize = 100_000;
const CALIBRATION_STREAM: u64 = 0xCA11_B8A7;
const BRACKET: (f64, f64) = (-50.0, 50.0);
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MechanismKind {
    Mcar,
    Mar,
    Mary,
    Mnar,
    Mnary,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 5] = [
        MechanismKind::Mcar,
        MechanismKind::Mar,
        MechanismKind::Mary,
        MechanismKind::Mnar,
        MechanismKind::Mnary,
    ];

    pub fn needs_response(self) -> bool {
        matches!(self, MechanismKind::Mary | MechanismKind::Mnary)
    }

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Mcar => "MCAR",
            MechanismKind::Mar => "MAR",
            MechanismKind::Mary => "MARY",
            MechanismKind::Mnar => "MNAR",
            MechanismKind::Mnary => "MNARY",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Outcome from the marginal linear model; masks applied afterwards.
    #[default]
    Selection,
    /// Masks drawn first; the outcome mean depends on the indicators.
    PatternMixture,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::Selection => "selection",
            Formulation::PatternMixture => "pattern_mixture",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    /// Intercept of the missingness model; `None` until calibrated.
    #[serde(default)]
    pub nu0: Option<f64>,
    #[serde(default)]
    pub nu1: f64,
    #[serde(default)]
    pub nu2: f64,
    #[serde(default)]
    pub nu1y: f64,
    #[serde(default)]
    pub nu2y: f64,
    pub target_prob: f64,
    /// Column whose mask is generated.
    #[serde(default)]
    pub target_column: usize,
    /// Observed column driving MAR/MARY; defaults to the next column.
    #[serde(default)]
    pub driver_column: Option<usize>,
}

impl MechanismSpec {
    pub fn new(kind: MechanismKind, target_prob: f64) -> Self {
        Self {
            kind,
            nu0: None,
            nu1: 0.0,
            nu2: 0.0,
            nu1y: 0.0,
            nu2y: 0.0,
            target_prob,
            target_column: 0,
            driver_column: None,
        }
    }

    pub fn driver(&self, p: usize) -> usize {
        self.driver_column
            .unwrap_or((self.target_column + 1) % p.max(1))
    }

    pub fn validate(&self, p: usize, formulation: Formulation) -> Result<()> {
        if self.target_column >= p || self.driver(p) >= p {
            return Err(Error::Config(format!(
                "mechanism column out of range for p = {p}"
            )));
        }
        if !(self.target_prob > 0.0 && self.target_prob < 1.0) {
            return Err(Error::Config(format!(
                "target_prob {} outside (0, 1)",
                self.target_prob
            )));
        }
        if formulation == Formulation::PatternMixture && self.kind.needs_response() {
            return Err(Error::SelectionOnly(self.kind.name()));
        }
        Ok(())
    }
}

/// Coefficients of the indicator terms of the outcome mean:
/// `sum_k indicator[k] M_k + sum_j sum_k interaction[j][k] x_j M_k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "DeltaRepr")]
pub struct Delta {
    pub indicator: Vec<f64>,
    /// `interaction[j][k]` multiplies `x_j * M_k`.
    pub interaction: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DeltaRepr {
    TwoColumn([f64; 6]),
    Full {
        #[serde(default)]
        indicator: Vec<f64>,
        #[serde(default)]
        interaction: Vec<Vec<f64>>,
    },
}

impl From<DeltaRepr> for Delta {
    fn from(r: DeltaRepr) -> Self {
        match r {
            DeltaRepr::TwoColumn(d) => Delta::two_column(d),
            DeltaRepr::Full {
                indicator,
                interaction,
            } => Delta {
                indicator,
                interaction,
            },
        }
    }
}

impl Delta {
    /// Two-covariate layout `[M1, M2, X1 M1, X2 M2, X1 M2, X2 M1]`.
    pub fn two_column(d: [f64; 6]) -> Self {
        Self {
            indicator: vec![d[0], d[1]],
            interaction: vec![vec![d[2], d[4]], vec![d[5], d[3]]],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.indicator.iter().all(|&v| v == 0.0)
            && self.interaction.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn shift(&self, x: &[f64], mask: &[bool]) -> f64 {
        let mut s = 0.0;
        for (k, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            s += self.indicator.get(k).copied().unwrap_or(0.0);
            for (j, xj) in x.iter().enumerate() {
                let c = self
                    .interaction
                    .get(j)
                    .and_then(|r| r.get(k))
                    .copied()
                    .unwrap_or(0.0);
                s += c * xj;
            }
        }
        s
    }
}

fn default_noise_sd() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    /// Intercept followed by one slope per covariate.
    pub beta: Vec<f64>,
    #[serde(default)]
    pub delta: Delta,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub formulation: Formulation,
}

impl GenConfig {
    /// Two equicorrelated unit-variance covariates.
    pub fn bivariate(n: usize, mu: [f64; 2], rho: f64, beta: [f64; 3]) -> Self {
        Self {
            n,
            mu: mu.to_vec(),
            sigma: vec![vec![1.0, rho], vec![rho, 1.0]],
            beta: beta.to_vec(),
            delta: Delta::default(),
            noise_sd: 1.0,
            formulation: Formulation::Selection,
        }
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.sigma.len() != p || self.sigma.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension(format!("sigma must be {p} x {p}")));
        }
        if self.beta.len() != p + 1 {
            return Err(Error::Dimension(format!("beta needs {} entries", p + 1)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        self.cholesky().map(|_| ())
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let p = self.p();
        let m = DMatrix::from_fn(p, p, |i, j| self.sigma[i][j]);
        if (0..p).any(|i| (0..i).any(|j| m[(i, j)] != m[(j, i)])) {
            return Err(Error::NotPositiveDefinite);
        }
        m.cholesky().map(|c| c.l()).ok_or(Error::NotPositiveDefinite)
    }

    pub fn linear_mean(&self, x: &[f64]) -> f64 {
        self.beta[0] + x.iter().zip(&self.beta[1..]).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Rows drawn i.i.d. from `N(mu, sigma)` as `mu + L z`.
pub fn gen_predictors<G: Rng + ?Sized>(cfg: &GenConfig, rng: &mut G) -> Result<Vec<Vec<f64>>> {
    let l = cfg.cholesky()?;
    let p = cfg.p();
    let mu = DVector::from_column_slice(&cfg.mu);
    Ok((0..cfg.n)
        .map(|_| {
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            (&mu + &l * z).iter().copied().collect()
        })
        .collect())
}

/// Logistic function, evaluated without overflow for large `|u|`.
pub fn expit(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn composite(y: &[f64], x: &[f64]) -> Vec<f64> {
    let (my, sy) = mean_sd(y);
    let (mx, sx) = mean_sd(x);
    let n = y.len() as f64;
    let cov = y
        .iter()
        .zip(x)
        .map(|(a, b)| (a - my) * (b - mx))
        .sum::<f64>()
        / (n - 1.0);
    let cor = cov / (sy * sx);
    let scale = (2.0 * (1.0 + cor)).sqrt();
    y.iter().zip(x).map(|(a, b)| (a / sy + b) / scale).collect()
}

/// Per-row linear part of the missingness model, excluding `nu0`.
pub fn missingness_term(spec: &MechanismSpec, x: &[Vec<f64>], y: Option<&[f64]>) -> Result<Vec<f64>> {
    let p = x.first().map_or(0, Vec::len);
    let column = |j: usize| -> Result<Vec<f64>> {
        if j >= p {
            return Err(Error::Dimension(format!("column {j} out of range")));
        }
        Ok(x.iter().map(|r| r[j]).collect())
    };
    let response = || y.ok_or(Error::ResponseRequired(spec.kind.name()));
    Ok(match spec.kind {
        MechanismKind::Mcar => vec![0.0; x.len()],
        MechanismKind::Mar => column(spec.driver(p))?.iter().map(|v| spec.nu2 * v).collect(),
        MechanismKind::Mnar => column(spec.target_column)?
            .iter()
            .map(|v| spec.nu1 * v)
            .collect(),
        MechanismKind::Mary => composite(response()?, &column(spec.driver(p))?)
            .iter()
            .map(|v| spec.nu2y * v)
            .collect(),
        MechanismKind::Mnary => composite(response()?, &column(spec.target_column)?)
            .iter()
            .map(|v| spec.nu1y * v)
            .collect(),
    })
}

/// Bisection for `nu0` so that the mean of `expit(nu0 + term_i)` equals the
/// target probability to within `tol`.
pub fn calibrate_nu0(
    spec: &MechanismSpec,
    x: &[Vec<f64>],
    y: Option<&[f64]>,
    tol: f64,
) -> Result<f64> {
    if !(spec.target_prob > 0.0 && spec.target_prob < 1.0) {
        return Err(Error::Calibration(format!(
            "target probability {} outside (0, 1)",
            spec.target_prob
        )));
    }
    if x.is_empty() {
        return Err(Error::Calibration("empty calibration sample".into()));
    }
    let term = missingness_term(spec, x, y)?;
    let gap = |nu: f64| term.iter().map(|t| expit(nu + t)).sum::<f64>() / term.len() as f64 - spec.target_prob;
    let (mut lo, mut hi) = BRACKET;
    if gap(lo) > 0.0 || gap(hi) < 0.0 {
        return Err(Error::Calibration(format!(
            "target {} not bracketed by [{lo}, {hi}]",
            spec.target_prob
        )));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid);
        if g == 0.0 || hi - lo < 1e-12 {
            lo = mid;
            hi = mid;
            break;
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    if gap(nu).abs() > tol {
        return Err(Error::Calibration(format!(
            "bisection ended {} away from target",
            gap(nu).abs()
        )));
    }
    Ok(nu)
}

/// Calibrate `nu0` on a dedicated sample of [`CALIBRATION_ROWS`] rows drawn
/// from `cfg` (selection outcome) with a stream derived from `seed`.
pub fn calibrate(spec: &MechanismSpec, cfg: &GenConfig, seed: u64) -> Result<MechanismSpec> {
    let mut rng = rng_from_seed(derive_seed(seed, CALIBRATION_STREAM));
    let big = GenConfig {
        n: CALIBRATION_ROWS,
        ..cfg.clone()
    };
    let x = gen_predictors(&big, &mut rng)?;
    let y = spec
        .kind
        .needs_response()
        .then(|| gen_outcome_selection(&x, &big, &mut rng));
    let nu0 = calibrate_nu0(spec, &x, y.as_deref(), 1e-3)?;
    Ok(MechanismSpec {
        nu0: Some(nu0),
        ..spec.clone()
    })
}

/// Independent Bernoulli mask for `spec.target_column`.
pub fn gen_missingness<G: Rng + ?Sized>(
    spec: &MechanismSpec,
    x: &[Vec<f64>],
    y: Option<&[f64]>,
    rng: &mut G,
) -> Result<Vec<bool>> {
    let nu0 = spec
        .nu0
        .ok_or_else(|| Error::Calibration("nu0 has not been calibrated".into()))?;
    let term = missingness_term(spec, x, y)?;
    Ok(term
        .iter()
        .map(|t| rng.random::<f64>() < expit(nu0 + t))
        .collect())
}

fn noise<G: Rng + ?Sized>(sd: f64, rng: &mut G) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).expect("finite sd").sample(rng)
    }
}

pub fn gen_outcome_selection<G: Rng + ?Sized>(x: &[Vec<f64>], cfg: &GenConfig, rng: &mut G) -> Vec<f64> {
    x.iter()
        .map(|row| cfg.linear_mean(row) + noise(cfg.noise_sd, rng))
        .collect()
}

/// Outcome whose mean adds the indicator and interaction shifts of
/// `cfg.delta`, evaluated at the true covariates. `masks[i][k]` is true when
/// covariate `k` of row `i` is missing.
pub fn gen_outcome_pattern_mixture<G: Rng + ?Sized>(
    x: &[Vec<f64>],
    masks: &[Vec<bool>],
    cfg: &GenConfig,
    rng: &mut G,
) -> Vec<f64> {
    x.iter()
        .zip(masks)
        .map(|(row, mask)| cfg.linear_mean(row) + cfg.delta.shift(row, mask) + noise(cfg.noise_sd, rng))
        .collect()
}

/// One draw of `X2 | X1 = x1` for a bivariate normal.
pub fn cond_draw_x2_given_x1<G: Rng + ?Sized>(
    x1: f64,
    mu: [f64; 2],
    sigma1: f64,
    sigma2: f64,
    rho: f64,
    rng: &mut G,
) -> f64 {
    let mean = mu[1] + sigma2 / sigma1 * rho * (x1 - mu[0]);
    let sd = ((1.0 - rho * rho) * sigma2 * sigma2).sqrt();
    mean + sd * rng.sample::<f64, _>(StandardNormal)
}

/// A generated replicate with the truth kept alongside the masked dataset.
#[derive(Debug, Clone)]
pub struct Generated {
    pub x: Vec<Vec<f64>>,
    /// `mask[i][j]` is true when covariate `j` of row `i` is missing.
    pub mask: Vec<Vec<bool>>,
    pub y: Vec<f64>,
    pub dataset: Dataset,
}

/// Draw predictors, masks (one per calibrated spec, composed independently)
/// and outcomes in the order the formulation requires.
pub fn generate<G: Rng + ?Sized>(
    cfg: &GenConfig,
    mechanisms: &[MechanismSpec],
    rng: &mut G,
) -> Result<Generated> {
    let p = cfg.p();
    for spec in mechanisms {
        spec.validate(p, cfg.formulation)?;
    }
    let x = gen_predictors(cfg, rng)?;
    let mut mask = vec![vec![false; p]; cfg.n];
    let apply = |mask: &mut Vec<Vec<bool>>, spec: &MechanismSpec, m: Vec<bool>| {
        for (row, missing) in mask.iter_mut().zip(m) {
            row[spec.target_column] |= missing;
        }
    };
    let y = match cfg.formulation {
        Formulation::Selection => {
            let y = gen_outcome_selection(&x, cfg, rng);
            for spec in mechanisms {
                let m = gen_missingness(spec, &x, Some(&y), rng)?;
                apply(&mut mask, spec, m);
            }
            y
        }
        Formulation::PatternMixture => {
            for spec in mechanisms {
                let m = gen_missingness(spec, &x, None, rng)?;
                apply(&mut mask, spec, m);
            }
            gen_outcome_pattern_mixture(&x, &mask, cfg, rng)
        }
    };
    let rows = x
        .iter()
        .zip(&mask)
        .map(|(r, m)| r.iter().zip(m).map(|(&v, &miss)| (!miss).then_some(v)).collect())
        .collect();
    let dataset = Dataset::new("y", default_names(p), y.clone(), rows)?;
    Ok(Generated { x, mask, y, dataset })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;

    fn two_covariate_cfg(n: usize) -> GenConfig {
        GenConfig::bivariate(n, [3.0, 3.0], 0.5, [1.0, 3.0, 1.0])
    }

    #[test]
    fn expit_identities() {
        assert_eq!(expit(0.0), 0.5);
        assert_relative_eq!(expit(-3.0) + expit(3.0), 1.0, epsilon = 1e-15);
        assert!(expit(710.0) <= 1.0 && expit(710.0).is_finite());
        assert!(expit(-710.0) >= 0.0 && expit(-710.0).is_finite());
    }

    #[test]
    fn mcar_calibrates_to_zero_at_half() {
        let x = vec![vec![1.0, 2.0]; 10_000];
        let nu = calibrate_nu0(&MechanismSpec::new(MechanismKind::Mcar, 0.5), &x, None, 1e-3).unwrap();
        assert!(nu.abs() < 1e-9, "{nu}");
    }

    #[test]
    fn predictors_standard_normal_mean() {
        let cfg = GenConfig {
            n: 20_000,
            mu: vec![0.0, 0.0, 0.0],
            sigma: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            beta: vec![0.0; 4],
            delta: Delta::default(),
            noise_sd: 1.0,
            formulation: Formulation::Selection,
        };
        let x = gen_predictors(&cfg, &mut rng_from_seed(1)).unwrap();
        for j in 0..3 {
            let m = x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64;
            assert!(m.abs() < 3.0 / (x.len() as f64).sqrt(), "{m}");
        }
        let empty = GenConfig { n: 0, ..cfg };
        assert!(gen_predictors(&empty, &mut rng_from_seed(1)).unwrap().is_empty());
    }

    #[test]
    fn non_positive_definite_sigma_rejected() {
        let mut cfg = two_covariate_cfg(10);
        cfg.sigma = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(gen_predictors(&cfg, &mut rng_from_seed(0)), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn outcome_means() {
        let mut cfg = two_covariate_cfg(1);
        cfg.noise_sd = 0.0;
        let x = vec![vec![3.0, 3.0]];
        assert_eq!(gen_outcome_selection(&x, &cfg, &mut rng_from_seed(0)), vec![13.0]);
        cfg.delta = Delta::two_column([1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let y = gen_outcome_pattern_mixture(&x, &[vec![true, false]], &cfg, &mut rng_from_seed(0));
        assert_eq!(y, vec![17.0]);
    }

    #[test]
    fn two_column_delta_layout() {
        let d = Delta::two_column([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = [10.0, 100.0];
        assert_relative_eq!(d.shift(&x, &[true, false]), 1.0 + 3.0 * 10.0 + 6.0 * 100.0);
        assert_relative_eq!(d.shift(&x, &[false, true]), 2.0 + 4.0 * 100.0 + 5.0 * 10.0);
        assert_eq!(d.shift(&x, &[false, false]), 0.0);
        let parsed: Delta = serde_json::from_str("[1,2,3,4,5,6]").unwrap();
        assert_eq!(parsed, d);
    }

    #[test]
    fn y_dependent_kinds_need_selection() {
        let spec = MechanismSpec::new(MechanismKind::Mary, 0.5);
        assert!(matches!(
            spec.validate(2, Formulation::PatternMixture),
            Err(Error::SelectionOnly("MARY"))
        ));
        let x = vec![vec![0.0, 0.0]; 3];
        assert!(matches!(
            missingness_term(&spec, &x, None),
            Err(Error::ResponseRequired(_))
        ));
    }

    #[test]
    fn conditional_draw_mean() {
        let mut rng = rng_from_seed(8);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| cond_draw_x2_given_x1(4.0, [3.0, 3.0], 1.0, 1.0, 0.5, &mut rng))
            .collect();
        let (m, sd) = mean_sd(&draws);
        assert!((m - 3.5).abs() < 3.0 * sd / (n as f64).sqrt());
        assert!((sd * sd - 0.75).abs() < 0.02);
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = two_covariate_cfg(200);
        let mut spec = MechanismSpec::new(MechanismKind::Mar, 0.5);
        spec.nu2 = 1.0;
        let spec = calibrate(&spec, &cfg, 3).unwrap();
        let a = generate(&cfg, &[spec.clone()], &mut rng_from_seed(5)).unwrap();
        let b = generate(&cfg, &[spec], &mut rng_from_seed(5)).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.dataset, b.dataset);
        assert!(a.mask.iter().all(|m| !m[1]));
    }
}

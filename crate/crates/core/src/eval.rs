//! Pattern-wise losses, analytic expected prediction error, stratified
//! cross-validation and the replicate-based simulation study.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_g17, partition, Dataset, PatternId, PatternIndex};
use crate::error::{Error, Result};
use crate::impute::{fit_engine, imputation_error, impute_record, ImputationMethod, ImputeOptions};
use crate::linear::{fit_matrix, DesignSpec, LinearFit};
use crate::mechanism::{calibrate, cond_draw_x2_given_x1, generate, GenConfig, MechanismSpec};
use crate::predict::{fit_method, MethodSpec};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternLoss {
    pub count: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternLossReport {
    pub per_pattern: BTreeMap<PatternId, PatternLoss>,
    pub weighted_total: f64,
    pub method_label: String,
    pub replicate_seed: u64,
}

impl PatternLossReport {
    pub fn total_count(&self) -> usize {
        self.per_pattern.values().map(|l| l.count).sum()
    }

    /// `(n_m / n) * mse_m` for one pattern, zero if absent.
    pub fn contribution(&self, pattern: PatternId) -> f64 {
        let n = self.total_count() as f64;
        self.per_pattern
            .get(&pattern)
            .map_or(0.0, |l| l.count as f64 / n * l.mse)
    }

    /// One row per pattern (ascending id) followed by the weighted total.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,scope,pattern,count,mse\n");
        for (pattern, loss) in &self.per_pattern {
            let _ = writeln!(
                out,
                "{},pattern,{},{},{}",
                self.method_label,
                pattern.0,
                loss.count,
                format_g17(loss.mse)
            );
        }
        let _ = writeln!(
            out,
            "{},total,,{},{}",
            self.method_label,
            self.total_count(),
            format_g17(self.weighted_total)
        );
        out
    }
}

/// Per-pattern mean squared error and the pattern-frequency-weighted total.
pub fn pattern_losses(
    preds: &[f64],
    truth: &[f64],
    patterns: &PatternIndex,
    method_label: &str,
    replicate_seed: u64,
) -> Result<PatternLossReport> {
    if preds.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} outcomes",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyFit);
    }
    if patterns.total_rows() != preds.len() {
        return Err(Error::Dimension("pattern index does not cover every row".into()));
    }
    let n = preds.len() as f64;
    let mut per_pattern = BTreeMap::new();
    let mut weighted_total = 0.0;
    for (pattern, rows) in patterns.iter() {
        let sse: f64 = rows.iter().map(|&i| (preds[i] - truth[i]).powi(2)).sum();
        let mse = sse / rows.len() as f64;
        weighted_total += rows.len() as f64 / n * mse;
        per_pattern.insert(
            pattern,
            PatternLoss {
                count: rows.len(),
                mse,
            },
        );
    }
    Ok(PatternLossReport {
        per_pattern,
        weighted_total,
        method_label: method_label.to_string(),
        replicate_seed,
    })
}

/// `σ² (1 + d' G⁻ d)` with `σ²` the fit's residual variance.
pub fn epe_large(fit: &LinearFit, x_point: &[f64]) -> Result<f64> {
    epe_large_with(fit, fit.sigma2()?, x_point)
}

/// [`epe_large`] with a known noise variance.
pub fn epe_large_with(fit: &LinearFit, sigma2: f64, x_point: &[f64]) -> Result<f64> {
    let d = fit.spec.expand(x_point, &[])?;
    Ok(sigma2 * (1.0 + fit.leverage(&d)))
}

/// Expected squared error of an underspecified fit at the full point
/// `x_full`: squared bias of its mean `projection · d` against the true mean,
/// the estimation variance `σ² d' G⁻ d`, and the irreducible `σ²`.
/// `projection` holds the coefficients the fit converges to in expectation
/// (the fit repeated on noise-free outcomes).
pub fn epe_small(
    small_fit: &LinearFit,
    projection: &[f64],
    true_beta: &[f64],
    sigma2: f64,
    x_full: &[f64],
) -> Result<f64> {
    let d = small_fit.spec.expand(x_full, &[])?;
    let mean: f64 = d.iter().zip(projection).map(|(a, b)| a * b).sum();
    let truth = true_beta[0]
        + x_full
            .iter()
            .zip(&true_beta[1..])
            .map(|(a, b)| a * b)
            .sum::<f64>();
    Ok((mean - truth).powi(2) + sigma2 * small_fit.leverage(&d) + sigma2)
}

/// `(1 - p) EPE_L + p EPE_S`.
pub fn epe_pmks(epe_l: f64, epe_s: f64, p_missing: f64) -> f64 {
    (1.0 - p_missing) * epe_l + p_missing * epe_s
}

/// Rows of `ds` assigned to `k` folds: each pattern's rows are shuffled and
/// dealt round-robin, continuing the deal across patterns.
pub fn stratified_folds(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > ds.n() {
        return Err(Error::Config(format!("{k} folds for {} rows", ds.n())));
    }
    let mut rng = rng_from_seed(derive_seed(seed, 0xF01D));
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (_, rows) in partition(ds).iter() {
        let mut rows = rows.to_vec();
        rows.shuffle(&mut rng);
        for i in rows {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Pattern-stratified k-fold cross-validation of one method.
pub fn kfold_cv(ds: &Dataset, spec: &MethodSpec, k: usize, seed: u64) -> Result<PatternLossReport> {
    let folds = stratified_folds(ds, k, seed)?;
    let per_fold: Vec<Vec<(usize, f64)>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let mut in_test = vec![false; ds.n()];
            for &i in test {
                in_test[i] = true;
            }
            let train_rows: Vec<usize> = (0..ds.n()).filter(|&i| !in_test[i]).collect();
            let train = ds.subset(&train_rows);
            let fold_seed = derive_seed(seed, f as u64);
            let model = fit_method(&train, spec, fold_seed)?;
            test.iter()
                .map(|&i| {
                    let mut rng = rng_from_seed(derive_seed(fold_seed, i as u64));
                    model.predict_one(ds.row(i), &mut rng).map(|p| (i, p.value))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut preds = vec![0.0; ds.n()];
    for (i, v) in per_fold.into_iter().flatten() {
        preds[i] = v;
    }
    pattern_losses(&preds, ds.y(), &partition(ds), &spec.label(), seed)
}

/// One data-generating scenario of the simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub generator: GenConfig,
    pub mechanisms: Vec<MechanismSpec>,
}

impl Scenario {
    pub fn mechanism_label(&self) -> String {
        self.mechanisms
            .iter()
            .map(|m| m.kind.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Imputation engine whose out-of-sample imputation error is tabulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub engine: ImputationMethod,
    #[serde(default)]
    pub options: ImputeOptions,
}

impl EngineSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.engine.name().to_string())
    }
}

fn default_reps() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Master seed; required before running.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Out-of-sample size; defaults to the training size.
    #[serde(default)]
    pub n_test: Option<usize>,
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub engines: Vec<EngineSpec>,
    #[serde(default)]
    pub figure1: Option<Figure1Config>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(Error::Config("a master seed is required".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        for s in &self.scenarios {
            s.generator.validate()?;
            for m in &s.mechanisms {
                m.validate(s.generator.p(), s.generator.formulation)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub scenario: String,
    pub mechanism: String,
    pub formulation: String,
    pub method: String,
    /// `total` or `pattern-<id>`; pattern rows hold `(n_m / n) mse_m`, so they
    /// sum to the total.
    pub scope: String,
    pub mean: f64,
    pub mc_se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationRow {
    pub scenario: String,
    pub mechanism: String,
    pub formulation: String,
    pub engine: String,
    pub mean: f64,
    pub mc_se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub rows: Vec<SimRow>,
    pub imputation_errors: Vec<ImputationRow>,
    /// `(scenario, method or engine label, failed replicates)`.
    pub failures: Vec<(String, String, usize)>,
}

impl SimReport {
    pub fn row(&self, scenario: &str, method: &str, scope: &str) -> Option<&SimRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.method == method && r.scope == scope)
    }

    pub fn imputation(&self, scenario: &str, engine: &str) -> Option<&ImputationRow> {
        self.imputation_errors
            .iter()
            .find(|r| r.scenario == scenario && r.engine == engine)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,mechanism,formulation,method,scope,mean,mc_se,reps\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.scenario,
                r.mechanism,
                r.formulation,
                r.method,
                r.scope,
                format_g17(r.mean),
                format_g17(r.mc_se),
                r.reps
            );
        }
        out
    }

    pub fn imputation_csv(&self) -> String {
        let mut out = String::from("scenario,mechanism,formulation,engine,mean,mc_se,reps\n");
        for r in &self.imputation_errors {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.scenario,
                r.mechanism,
                r.formulation,
                r.engine,
                format_g17(r.mean),
                format_g17(r.mc_se),
                r.reps
            );
        }
        out
    }
}

/// Mean and Monte Carlo standard error `sd / sqrt(n)`.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

struct Replicate {
    losses: Vec<Option<PatternLossReport>>,
    imputation: Vec<Option<f64>>,
}

fn run_replicate(
    scenario: &Scenario,
    mechanisms: &[MechanismSpec],
    methods: &[MethodSpec],
    engines: &[EngineSpec],
    n_test: usize,
    seed: u64,
) -> Result<Replicate> {
    let mut rng = rng_from_seed(seed);
    let train = generate(&scenario.generator, mechanisms, &mut rng)?;
    let test_cfg = GenConfig {
        n: n_test,
        ..scenario.generator.clone()
    };
    let test = generate(&test_cfg, mechanisms, &mut rng)?;
    let test_patterns = partition(&test.dataset);

    let losses = methods
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let fit_seed = derive_seed(seed, 0x100 + k as u64);
            let outcome = fit_method(&train.dataset, spec, fit_seed).and_then(|model| {
                let preds = model.predict_dataset(&test.dataset, derive_seed(fit_seed, 1))?;
                let values: Vec<f64> = preds.iter().map(|p| p.value).collect();
                pattern_losses(&values, &test.y, &test_patterns, &spec.label(), seed)
            });
            match outcome {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("replicate {seed:#x}: {} failed: {e}", spec.label());
                    None
                }
            }
        })
        .collect();

    let targets: Vec<usize> = {
        let mut t: Vec<usize> = mechanisms.iter().map(|m| m.target_column).collect();
        t.sort_unstable();
        t.dedup();
        t
    };
    let imputation = engines
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let engine_seed = derive_seed(seed, 0x200 + k as u64);
            let outcome = fit_engine(&train.dataset, spec.engine, &spec.options, engine_seed).and_then(|engine| {
                let completions: Vec<Vec<Vec<f64>>> = (0..test.dataset.n())
                    .map(|i| {
                        let mut r = rng_from_seed(derive_seed(engine_seed, i as u64));
                        impute_record(&engine, test.dataset.row(i), &mut r)
                    })
                    .collect::<Result<_>>()?;
                let m = engine.completions();
                let per_column: Vec<f64> = targets
                    .iter()
                    .map(|&j| {
                        let truth: Vec<f64> = test.x.iter().map(|r| r[j]).collect();
                        let mask: Vec<bool> = test.mask.iter().map(|r| r[j]).collect();
                        let imputed: Vec<Vec<f64>> = (0..m)
                            .map(|c| completions.iter().map(|rec| rec[c][j]).collect())
                            .collect();
                        imputation_error(&truth, &imputed, &mask)
                    })
                    .collect();
                Ok(per_column.iter().sum::<f64>() / per_column.len().max(1) as f64)
            });
            match outcome {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("replicate {seed:#x}: engine {} failed: {e}", spec.label());
                    None
                }
            }
        })
        .collect();
    Ok(Replicate { losses, imputation })
}

/// Run every scenario for `reps` replicates. Replicates run in parallel on
/// independent derived streams and are reduced in a fixed order, so the
/// report depends only on the configuration.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let master = cfg.seed.expect("validated");
    let mut report = SimReport {
        rows: vec![],
        imputation_errors: vec![],
        failures: vec![],
    };
    for (s, scenario) in cfg.scenarios.iter().enumerate() {
        let scenario_seed = derive_seed(master, s as u64);
        let mechanisms = scenario
            .mechanisms
            .iter()
            .enumerate()
            .map(|(k, m)| match m.nu0 {
                Some(_) => Ok(m.clone()),
                None => calibrate(m, &scenario.generator, derive_seed(scenario_seed, k as u64)),
            })
            .collect::<Result<Vec<_>>>()?;
        let n_test = cfg.n_test.unwrap_or(scenario.generator.n);
        let reps: Vec<Replicate> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                run_replicate(
                    scenario,
                    &mechanisms,
                    &cfg.methods,
                    &cfg.engines,
                    n_test,
                    derive_seed(scenario_seed, 0x1_0000 + r as u64),
                )
            })
            .collect::<Result<_>>()?;

        let mechanism = scenario.mechanism_label();
        let formulation = scenario.generator.formulation.name().to_string();
        for (k, spec) in cfg.methods.iter().enumerate() {
            let ok: Vec<&PatternLossReport> = reps.iter().filter_map(|r| r.losses[k].as_ref()).collect();
            let failed = reps.len() - ok.len();
            if failed > 0 {
                report.failures.push((scenario.name.clone(), spec.label(), failed));
            }
            let mut scopes: Vec<(String, Vec<f64>)> = vec![(
                "total".into(),
                ok.iter().map(|r| r.weighted_total).collect(),
            )];
            let patterns: std::collections::BTreeSet<PatternId> =
                ok.iter().flat_map(|r| r.per_pattern.keys().copied()).collect();
            for pattern in patterns {
                scopes.push((
                    format!("pattern-{}", pattern.0),
                    ok.iter().map(|r| r.contribution(pattern)).collect(),
                ));
            }
            for (scope, values) in scopes {
                let (mean, mc_se) = mean_and_se(&values);
                report.rows.push(SimRow {
                    scenario: scenario.name.clone(),
                    mechanism: mechanism.clone(),
                    formulation: formulation.clone(),
                    method: spec.label(),
                    scope,
                    mean,
                    mc_se,
                    reps: values.len(),
                });
            }
        }
        for (k, spec) in cfg.engines.iter().enumerate() {
            let values: Vec<f64> = reps.iter().filter_map(|r| r.imputation[k]).collect();
            let failed = reps.len() - values.len();
            if failed > 0 {
                report.failures.push((scenario.name.clone(), spec.label(), failed));
            }
            let (mean, mc_se) = mean_and_se(&values);
            report.imputation_errors.push(ImputationRow {
                scenario: scenario.name.clone(),
                mechanism: mechanism.clone(),
                formulation: formulation.clone(),
                engine: spec.label(),
                mean,
                mc_se,
                reps: values.len(),
            });
        }
    }
    Ok(report)
}

fn figure1_grid() -> Vec<f64> {
    (0..=12).map(|i| i as f64 * 0.5).collect()
}

fn figure1_draws() -> usize {
    10_000
}

/// Two-covariate experiment comparing the full model, the model omitting
/// `x2`, and their pattern-weighted mixture along a grid of `x1` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure1Config {
    pub n: usize,
    pub mu: [f64; 2],
    pub rho: f64,
    pub beta: [f64; 3],
    #[serde(default = "one")]
    pub noise_sd: f64,
    pub p_missing: f64,
    #[serde(default = "figure1_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "figure1_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for Figure1Config {
    fn default() -> Self {
        Self {
            n: 1000,
            mu: [3.0, 3.0],
            rho: 0.5,
            beta: [1.0, 3.0, 1.0],
            noise_sd: 1.0,
            p_missing: 0.5,
            grid: figure1_grid(),
            draws: figure1_draws(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure1Point {
    pub x1: f64,
    pub epe_l: f64,
    pub epe_s: f64,
    pub epe_pmks: f64,
    pub mc_estimate: f64,
    pub mc_se: f64,
}

pub fn figure1_csv(points: &[Figure1Point]) -> String {
    let mut out = String::from("x1,epe_l,epe_s,epe_pmks,mc_estimate,mc_se\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            format_g17(p.x1),
            format_g17(p.epe_l),
            format_g17(p.epe_s),
            format_g17(p.epe_pmks),
            format_g17(p.mc_estimate),
            format_g17(p.mc_se)
        );
    }
    out
}

/// Least-squares fit plus the hat operator `G⁻ X'` so refits on new
/// outcomes over the same design are a single product.
struct FixedDesign {
    fit: LinearFit,
    hat: DMatrix<f64>,
}

impl FixedDesign {
    fn new(design: DMatrix<f64>, y: &[f64], spec: DesignSpec) -> Result<Self> {
        let fit = fit_matrix(&design, y, spec)?;
        let t = fit.n_terms();
        let g = DMatrix::from_fn(t, t, |i, j| fit.gram_inverse[i][j]);
        let hat = g * design.transpose();
        Ok(Self { fit, hat })
    }

    fn refit(&self, y: &[f64]) -> Vec<f64> {
        (0..self.hat.nrows())
            .map(|r| self.hat.row(r).iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Analytic expected prediction error of the full model, the model omitting
/// `x2`, and the PMKS mixture, averaged over `x2 | x1`, with a Monte Carlo
/// estimate of the realised PMKS error at each grid point. Each draw
/// refreshes the training noise (design held fixed), the test `x2 | x1`, the
/// test noise and the test record's pattern.
pub fn figure1_experiment(cfg: &Figure1Config) -> Result<Vec<Figure1Point>> {
    let sigma2 = cfg.noise_sd * cfg.noise_sd;
    let beta = cfg.beta;
    let mut gen = GenConfig::bivariate(cfg.n, cfg.mu, cfg.rho, beta);
    gen.noise_sd = cfg.noise_sd;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0xF1));
    let x = crate::mechanism::gen_predictors(&gen, &mut rng)?;
    let missing: Vec<bool> = (0..cfg.n).map(|_| rng.random::<f64>() < cfg.p_missing).collect();
    let large_rows: Vec<usize> = (0..cfg.n).filter(|&i| !missing[i]).collect();
    let small_rows: Vec<usize> = (0..cfg.n).filter(|&i| missing[i]).collect();
    let mean = |r: &[f64]| beta[0] + beta[1] * r[0] + beta[2] * r[1];

    let large_design = DMatrix::from_fn(large_rows.len(), 3, |r, c| match c {
        0 => 1.0,
        c => x[large_rows[r]][c - 1],
    });
    let small_design = DMatrix::from_fn(small_rows.len(), 2, |r, c| match c {
        0 => 1.0,
        _ => x[small_rows[r]][0],
    });
    let large_mean: Vec<f64> = large_rows.iter().map(|&i| mean(&x[i])).collect();
    let small_mean: Vec<f64> = small_rows.iter().map(|&i| mean(&x[i])).collect();
    let large = FixedDesign::new(large_design, &large_mean, DesignSpec::full(2))?;
    let small = FixedDesign::new(small_design, &small_mean, DesignSpec::linear(true, &[0]))?;
    // noise-free fits give the coefficients each model converges to
    let projection = small.fit.coefficients.clone();

    let cond_var = (1.0 - cfg.rho * cfg.rho) * 1.0;
    cfg.grid
        .par_iter()
        .enumerate()
        .map(|(g, &x1)| {
            let m2 = cfg.mu[1] + cfg.rho * (x1 - cfg.mu[0]);
            let at = [x1, m2];
            let epe_l = epe_large_with(&large.fit, sigma2, &at)? + sigma2 * large.fit.gram_inverse[2][2] * cond_var;
            let epe_s = epe_small(&small.fit, &projection, &beta, sigma2, &at)? + beta[2] * beta[2] * cond_var;
            let analytic = epe_pmks(epe_l, epe_s, cfg.p_missing);

            let mut rng = rng_from_seed(derive_seed(cfg.seed, g as u64));
            let mut losses = Vec::with_capacity(cfg.draws);
            let mut y_large = vec![0.0; large_mean.len()];
            let mut y_small = vec![0.0; small_mean.len()];
            for _ in 0..cfg.draws {
                let x2 = cond_draw_x2_given_x1(x1, cfg.mu, 1.0, 1.0, cfg.rho, &mut rng);
                let y0 = mean(&[x1, x2]) + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
                let pred = if rng.random::<f64>() < cfg.p_missing {
                    for (y, m) in y_small.iter_mut().zip(&small_mean) {
                        *y = m + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
                    }
                    let c = small.refit(&y_small);
                    c[0] + c[1] * x1
                } else {
                    for (y, m) in y_large.iter_mut().zip(&large_mean) {
                        *y = m + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
                    }
                    let c = large.refit(&y_large);
                    c[0] + c[1] * x1 + c[2] * x2
                };
                losses.push((pred - y0).powi(2));
            }
            let (mc_estimate, mc_se) = mean_and_se(&losses);
            Ok(Figure1Point {
                x1,
                epe_l,
                epe_s,
                epe_pmks: analytic,
                mc_estimate,
                mc_se,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatternId;
    use crate::predict::Method;
    use approx::assert_relative_eq;

    #[test]
    fn weighted_total_arithmetic() {
        let idx = PatternIndex::from_patterns([PatternId(0), PatternId(1), PatternId(1), PatternId(1)]);
        let r = pattern_losses(&[2.0, 1.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 1.0], &idx, "m", 0).unwrap();
        assert_eq!(r.per_pattern[&PatternId(0)].mse, 4.0);
        assert_eq!(r.per_pattern[&PatternId(1)].mse, 0.0);
        assert_relative_eq!(r.weighted_total, 1.0);
        assert!(pattern_losses(&[], &[], &PatternIndex::default(), "m", 0).is_err());
    }

    #[test]
    fn epe_pmks_is_affine() {
        assert_eq!(epe_pmks(1.0, 2.0, 0.0), 1.0);
        assert_eq!(epe_pmks(1.0, 2.0, 1.0), 2.0);
        assert_eq!(epe_pmks(1.0, 2.0, 0.5), 1.5);
    }

    #[test]
    fn folds_are_stratified_and_cover_rows() {
        let rows: Vec<Vec<Option<f64>>> = (0..30)
            .map(|i| if i % 3 == 0 { vec![None, Some(i as f64)] } else { vec![Some(1.0), Some(i as f64)] })
            .collect();
        let ds = Dataset::with_default_names((0..30).map(f64::from).collect(), rows, 2).unwrap();
        let folds = stratified_folds(&ds, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.len(), 6);
            assert_eq!(f.iter().filter(|&&i| i % 3 == 0).count(), 2);
        }
        assert!(stratified_folds(&ds, 31, 1).is_err());
        assert!(stratified_folds(&ds, 1, 1).is_err());
    }

    #[test]
    fn noiseless_cv_is_exact() {
        let rows: Vec<Vec<Option<f64>>> = (0..40)
            .map(|i| {
                let a = (i as f64 * 0.7).sin();
                let b = (i as f64 * 1.3).cos();
                if i % 2 == 0 { vec![Some(a), Some(b)] } else { vec![Some(a), None] }
            })
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| if i % 2 == 0 { 1.0 + r[0].unwrap() + 2.0 * r[1].unwrap() } else { 4.0 - r[0].unwrap() })
            .collect();
        let ds = Dataset::with_default_names(y, rows, 2).unwrap();
        let r = kfold_cv(&ds, &MethodSpec::new(Method::Pmks), 4, 3).unwrap();
        assert!(r.weighted_total < 1e-10, "{}", r.weighted_total);
        assert_eq!(r, kfold_cv(&ds, &MethodSpec::new(Method::Pmks), 4, 3).unwrap());
    }

    #[test]
    fn mean_and_se_basics() {
        let (m, se) = mean_and_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_relative_eq!(se, (2.0f64 / 2.0).sqrt());
        assert_eq!(mean_and_se(&[5.0]), (5.0, 0.0));
    }
}

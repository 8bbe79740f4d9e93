//! Imputation engines fit once on in-sample data and then applied, unchanged,
//! to in-sample datasets or to out-of-sample records one at a time.
//!
//! The conditional-mean engines are pattern specific: a record in pattern `m`
//! has each missing column predicted from exactly the columns observed in `m`.
//! The chained-equations engine uses predictive mean matching (PMM): donors are
//! matched on the OLS prediction, recipients on a posterior coefficient draw,
//! and the imputed value is drawn uniformly from the `k` nearest donors.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition, Dataset, PatternId};
use crate::error::{Error, Result};
use crate::linear::{fit_least_squares, fit_matrix, DesignSpec, LinearFit, Term};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationMethod {
    Zero,
    UncondMean,
    CondMean,
    CondMeanBayes,
    PmmMice,
}

impl ImputationMethod {
    pub const ALL: [ImputationMethod; 5] = [
        ImputationMethod::Zero,
        ImputationMethod::UncondMean,
        ImputationMethod::CondMean,
        ImputationMethod::CondMeanBayes,
        ImputationMethod::PmmMice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ImputationMethod::Zero => "zero",
            ImputationMethod::UncondMean => "uncond-mean",
            ImputationMethod::CondMean => "cond-mean",
            ImputationMethod::CondMeanBayes => "cond-mean-bayes",
            ImputationMethod::PmmMice => "pmm-mice",
        }
    }
}

impl std::str::FromStr for ImputationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown imputation method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputationMode {
    /// Apply the engine fit on training data, never updating it.
    #[default]
    Frozen,
    /// Rerun the chained imputation with the new record appended.
    Refit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeOptions {
    pub m: usize,
    pub k_donors: usize,
    /// Chained-equation cycles over the training data.
    pub cycles: usize,
    /// Sweeps over a single out-of-sample record's missing variables.
    pub record_passes: usize,
    pub include_y: bool,
    pub mode: ImputationMode,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        Self {
            m: 10,
            k_donors: 5,
            cycles: 10,
            record_passes: 1,
            include_y: false,
            mode: ImputationMode::Frozen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondModel {
    pub column: usize,
    pub pattern: PatternId,
    pub fit: LinearFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Donor {
    pub predicted: f64,
    pub value: f64,
}

/// Final state of one chained-equation variable: the regression used for
/// donors, the coefficient draw used for recipients, and the donor pool
/// sorted by predicted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub target: usize,
    pub fit: LinearFit,
    pub draw: Vec<f64>,
    pub donors: Vec<Donor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmmChain {
    /// Chain variables in visiting order; index `p` is the response.
    pub visit_order: Vec<usize>,
    /// Indexed by chain variable.
    pub models: Vec<ChainModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationEngine {
    pub method: ImputationMethod,
    pub p: usize,
    pub options: ImputeOptions,
    pub seed: u64,
    /// Observed-value means; empty for the zero engine.
    pub column_means: Vec<f64>,
    /// Sorted by `(column, pattern)`.
    pub cond_models: Vec<CondModel>,
    pub chains: Vec<PmmChain>,
}

/// A fully observed `n × p` covariate matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteMatrix {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl CompleteMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.p + j]).collect()
    }
}

/// `m` completions of one dataset (`m = 1` for deterministic engines).
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedData {
    pub completions: Vec<CompleteMatrix>,
}

impl CompletedData {
    pub fn m(&self) -> usize {
        self.completions.len()
    }
}

impl ImputationEngine {
    /// Number of completions produced per record.
    pub fn completions(&self) -> usize {
        match self.method {
            ImputationMethod::PmmMice => self.options.m,
            _ => 1,
        }
    }

    pub fn cond_model(&self, column: usize, pattern: PatternId) -> Option<&LinearFit> {
        self.cond_models
            .binary_search_by(|c| (c.column, c.pattern).cmp(&(column, pattern)))
            .ok()
            .map(|i| &self.cond_models[i].fit)
    }
}

fn column_means(ds: &Dataset, require: &[usize]) -> Result<Vec<f64>> {
    (0..ds.p())
        .map(|j| {
            let obs = ds.observed_values(j);
            if obs.is_empty() {
                if require.contains(&j) {
                    Err(Error::AllMissingColumn(j))
                } else {
                    Ok(0.0)
                }
            } else {
                Ok(obs.iter().sum::<f64>() / obs.len() as f64)
            }
        })
        .collect()
}

pub fn fit_engine(
    ds: &Dataset,
    method: ImputationMethod,
    options: &ImputeOptions,
    seed: u64,
) -> Result<ImputationEngine> {
    fit_engine_with_completions(ds, method, options, seed).map(|(e, _)| e)
}

/// Fit an engine and return the in-sample completions it implies.
pub fn fit_engine_with_completions(
    ds: &Dataset,
    method: ImputationMethod,
    options: &ImputeOptions,
    seed: u64,
) -> Result<(ImputationEngine, CompletedData)> {
    let p = ds.p();
    let with_missing = ds.columns_with_missing();
    let mut engine = ImputationEngine {
        method,
        p,
        options: options.clone(),
        seed,
        column_means: vec![],
        cond_models: vec![],
        chains: vec![],
    };
    match method {
        ImputationMethod::Zero => {}
        ImputationMethod::UncondMean => {
            engine.column_means = column_means(ds, &with_missing)?;
        }
        ImputationMethod::CondMean | ImputationMethod::CondMeanBayes => {
            engine.column_means = column_means(ds, &with_missing)?;
            engine.cond_models = fit_cond_models(ds)?;
        }
        ImputationMethod::PmmMice => {
            if options.m < 2 {
                return Err(Error::Config("pmm-mice needs m >= 2".into()));
            }
            if options.k_donors == 0 {
                return Err(Error::Config("k_donors must be positive".into()));
            }
            for &j in &with_missing {
                let available = ds.n() - ds.missing_count(j);
                if available == 0 {
                    return Err(Error::AllMissingColumn(j));
                }
                if available < options.k_donors {
                    return Err(Error::InsufficientDonors {
                        column: j,
                        available,
                        needed: options.k_donors,
                    });
                }
            }
            engine.column_means = column_means(ds, &with_missing)?;
            let table = VarTable::from_dataset(ds, options.include_y, None);
            let runs = run_chains(&table, options, seed)?;
            let mut completions = Vec::with_capacity(runs.len());
            for (values, chain) in runs {
                completions.push(table.covariates(&values));
                engine.chains.push(chain);
            }
            return Ok((engine, CompletedData { completions }));
        }
    }
    let completed = impute_dataset(&engine, ds)?;
    Ok((engine, completed))
}

fn fit_cond_models(ds: &Dataset) -> Result<Vec<CondModel>> {
    let p = ds.p();
    let index = partition(ds);
    let mut models = Vec::new();
    for (pattern, _) in index.iter() {
        let observed = pattern.observed_columns(p);
        let spec = DesignSpec::linear(true, &observed);
        for column in pattern.missing_columns(p) {
            let rows: Vec<usize> = (0..ds.n())
                .filter(|&i| {
                    !ds.is_missing(i, column) && observed.iter().all(|&j| !ds.is_missing(i, j))
                })
                .collect();
            if rows.len() < 2 {
                return Err(Error::InsufficientRows {
                    column,
                    pattern,
                    available: rows.len(),
                });
            }
            let y: Vec<f64> = rows
                .iter()
                .map(|&i| ds.value(i, column).expect("observed"))
                .collect();
            let fit = fit_least_squares(rows.iter().map(|&i| (ds.row(i), &[][..])), &y, &spec)?;
            models.push(CondModel {
                column,
                pattern,
                fit,
            });
        }
    }
    models.sort_by(|a, b| (a.column, a.pattern).cmp(&(b.column, b.pattern)));
    Ok(models)
}

/// Impute one partially observed record. Returns one completion for
/// deterministic engines and `m` for the chained engine; observed cells are
/// copied through unchanged.
pub fn impute_record<G: Rng + ?Sized>(
    engine: &ImputationEngine,
    values: &[Option<f64>],
    rng: &mut G,
) -> Result<Vec<Vec<f64>>> {
    let p = engine.p;
    if values.len() != p {
        return Err(Error::Dimension(format!(
            "record has {} cells, engine expects {p}",
            values.len()
        )));
    }
    let m = engine.completions();
    if values.iter().all(Option::is_some) {
        let row: Vec<f64> = values.iter().map(|v| v.expect("observed")).collect();
        return Ok(vec![row; m]);
    }
    let pattern = PatternId::of_record(values);
    match engine.method {
        ImputationMethod::Zero => Ok(vec![values.iter().map(|v| v.unwrap_or(0.0)).collect()]),
        ImputationMethod::UncondMean => Ok(vec![values
            .iter()
            .enumerate()
            .map(|(j, v)| v.unwrap_or(engine.column_means[j]))
            .collect()]),
        ImputationMethod::CondMean | ImputationMethod::CondMeanBayes => {
            let bayes = engine.method == ImputationMethod::CondMeanBayes;
            let mut out = Vec::with_capacity(p);
            for (j, v) in values.iter().enumerate() {
                let filled = match v {
                    Some(v) => *v,
                    None => match engine.cond_model(j, pattern) {
                        Some(fit) => {
                            let row = fit.spec.expand(values, &[])?;
                            if bayes {
                                let draw = fit.posterior_draw(rng);
                                row.iter().zip(&draw).map(|(a, b)| a * b).sum()
                            } else {
                                fit.predict_row(&row)
                            }
                        }
                        None => {
                            log::warn!(
                                "no conditional model for column {j} in pattern {pattern}; using the column mean"
                            );
                            engine.column_means[j]
                        }
                    },
                };
                out.push(filled);
            }
            Ok(vec![out])
        }
        ImputationMethod::PmmMice => {
            let mut completions = Vec::with_capacity(m);
            for chain in &engine.chains {
                completions.push(impute_record_chain(engine, chain, values, rng)?);
            }
            Ok(completions)
        }
    }
}

fn impute_record_chain<G: Rng + ?Sized>(
    engine: &ImputationEngine,
    chain: &PmmChain,
    values: &[Option<f64>],
    rng: &mut G,
) -> Result<Vec<f64>> {
    let p = engine.p;
    let width = chain.models.len();
    let mut row: Vec<f64> = vec![0.0; width];
    let mut missing = vec![false; width];
    for v in 0..width {
        match values.get(v).copied().flatten() {
            Some(x) => row[v] = x,
            None => {
                // response slot (v == p) is always unknown at prediction time
                missing[v] = true;
                let donors = &chain.models[v].donors;
                row[v] = donors[rng.random_range(0..donors.len())].value;
            }
        }
    }
    let order: Vec<usize> = chain
        .visit_order
        .iter()
        .copied()
        .filter(|&v| missing[v])
        .collect();
    let k = engine.options.k_donors;
    for _ in 0..engine.options.record_passes.max(1) {
        for &v in &order {
            let model = &chain.models[v];
            let design = model.fit.spec.expand(&row, &[])?;
            let target: f64 = design.iter().zip(&model.draw).map(|(a, b)| a * b).sum();
            row[v] = pmm_select(&model.donors, target, k, rng);
        }
    }
    row.truncate(p);
    Ok(row)
}

/// Impute every row of `ds`. Deterministic engines apply [`impute_record`]
/// row by row; the chained engine reruns its cycles jointly over `ds` with the
/// engine's seed, so on the training data it reproduces the fit-time completions.
pub fn impute_dataset(engine: &ImputationEngine, ds: &Dataset) -> Result<CompletedData> {
    if ds.p() != engine.p {
        return Err(Error::Dimension(format!(
            "dataset has {} columns, engine expects {}",
            ds.p(),
            engine.p
        )));
    }
    if engine.method == ImputationMethod::PmmMice {
        let table = VarTable::from_dataset(ds, engine.options.include_y, None);
        let runs = run_chains(&table, &engine.options, engine.seed)?;
        return Ok(CompletedData {
            completions: runs.iter().map(|(v, _)| table.covariates(v)).collect(),
        });
    }
    let mut rng = rng_from_seed(derive_seed(engine.seed, 0xDA7A));
    let mut data = Vec::with_capacity(ds.n() * ds.p());
    for i in 0..ds.n() {
        let mut c = impute_record(engine, ds.row(i), &mut rng)?;
        data.append(&mut c[0]);
    }
    Ok(CompletedData {
        completions: vec![CompleteMatrix {
            n: ds.n(),
            p: ds.p(),
            data,
        }],
    })
}

/// Append `record` to the training data, rerun the full chained imputation and
/// return the `m` completions of the new record.
pub fn refit_mi_with_record(
    train: &Dataset,
    record: &[Option<f64>],
    options: &ImputeOptions,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if record.len() != train.p() {
        return Err(Error::Dimension("record width differs from training data".into()));
    }
    if record.iter().all(Option::is_some) {
        let row: Vec<f64> = record.iter().map(|v| v.expect("observed")).collect();
        return Ok(vec![row; options.m]);
    }
    // validates options and donor counts
    fit_engine(train, ImputationMethod::PmmMice, &ImputeOptions { m: 2, cycles: 0, ..options.clone() }, seed)?;
    let table = VarTable::from_dataset(train, options.include_y, Some(record));
    let runs = run_chains(&table, options, seed)?;
    let last = table.n - 1;
    Ok(runs
        .iter()
        .map(|(values, _)| values[last * table.width..last * table.width + train.p()].to_vec())
        .collect())
}

/// Mean over all `n` individuals of the squared error between the truth and
/// the across-completion mean imputation; observed cells contribute zero.
pub fn imputation_error(truth: &[f64], completions: &[Vec<f64>], mask: &[bool]) -> f64 {
    let n = truth.len();
    if n == 0 {
        return 0.0;
    }
    let m = completions.len().max(1) as f64;
    let sse: f64 = (0..n)
        .filter(|&i| mask[i])
        .map(|i| {
            let mean = completions.iter().map(|c| c[i]).sum::<f64>() / m;
            (truth[i] - mean).powi(2)
        })
        .sum();
    sse / n as f64
}

/// Uniform draw among the `k` donors whose predicted means are closest to
/// `target`. `donors` must be sorted by predicted mean.
pub fn pmm_select<G: Rng + ?Sized>(donors: &[Donor], target: f64, k: usize, rng: &mut G) -> f64 {
    let idx = nearest_donors(donors, target, k);
    donors[idx.start + rng.random_range(0..idx.len())].value
}

/// Contiguous index range of the `k` nearest donors (ties go to the lower side).
pub fn nearest_donors(donors: &[Donor], target: f64, k: usize) -> std::ops::Range<usize> {
    let k = k.min(donors.len()).max(1);
    let split = donors.partition_point(|d| d.predicted < target);
    let (mut lo, mut hi) = (split, split);
    while hi - lo < k {
        let take_low = match (lo > 0, hi < donors.len()) {
            (true, true) => target - donors[lo - 1].predicted <= donors[hi].predicted - target,
            (true, false) => true,
            (false, true) => false,
            (false, false) => break,
        };
        if take_low {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    lo..hi
}

/// Covariates plus (optionally) the response as chain variables.
struct VarTable {
    n: usize,
    p: usize,
    width: usize,
    cells: Vec<Option<f64>>,
}

impl VarTable {
    fn from_dataset(ds: &Dataset, include_y: bool, extra: Option<&[Option<f64>]>) -> Self {
        let p = ds.p();
        let width = if include_y { p + 1 } else { p };
        let n = ds.n() + usize::from(extra.is_some());
        let mut cells = Vec::with_capacity(n * width);
        for i in 0..ds.n() {
            cells.extend_from_slice(ds.row(i));
            if include_y {
                cells.push(Some(ds.y()[i]));
            }
        }
        if let Some(rec) = extra {
            cells.extend_from_slice(rec);
            if include_y {
                cells.push(None);
            }
        }
        Self { n, p, width, cells }
    }

    fn get(&self, i: usize, v: usize) -> Option<f64> {
        self.cells[i * self.width + v]
    }

    fn missing_count(&self, v: usize) -> usize {
        (0..self.n).filter(|&i| self.get(i, v).is_none()).count()
    }

    fn covariates(&self, values: &[f64]) -> CompleteMatrix {
        let mut data = Vec::with_capacity(self.n * self.p);
        for i in 0..self.n {
            data.extend_from_slice(&values[i * self.width..i * self.width + self.p]);
        }
        CompleteMatrix {
            n: self.n,
            p: self.p,
            data,
        }
    }
}

fn run_chains(
    table: &VarTable,
    options: &ImputeOptions,
    seed: u64,
) -> Result<Vec<(Vec<f64>, PmmChain)>> {
    (0..options.m)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, c as u64));
            run_chain(table, options, &mut rng)
        })
        .collect()
}

fn run_chain(
    table: &VarTable,
    options: &ImputeOptions,
    rng: &mut SimRng,
) -> Result<(Vec<f64>, PmmChain)> {
    let (n, w) = (table.n, table.width);
    let counts: Vec<usize> = (0..w).map(|v| table.missing_count(v)).collect();
    let mut visit_order: Vec<usize> = (0..w).collect();
    visit_order.sort_by_key(|&v| (counts[v], v));

    let mut values = vec![0.0; n * w];
    for v in 0..w {
        let observed: Vec<f64> = (0..n).filter_map(|i| table.get(i, v)).collect();
        for i in 0..n {
            values[i * w + v] = match table.get(i, v) {
                Some(x) => x,
                None => observed[rng.random_range(0..observed.len())],
            };
        }
    }

    let mut models: Vec<Option<ChainModel>> = vec![None; w];
    let imputed: Vec<usize> = visit_order.iter().copied().filter(|&v| counts[v] > 0).collect();
    for _ in 0..options.cycles {
        for &v in &imputed {
            let model = fit_chain_model(table, &values, v, rng)?;
            for i in (0..n).filter(|&i| table.get(i, v).is_none()) {
                let target = chain_prediction(&values[i * w..(i + 1) * w], v, &model.draw);
                values[i * w + v] = pmm_select(&model.donors, target, options.k_donors, rng);
            }
            models[v] = Some(model);
        }
    }
    let models = (0..w)
        .map(|v| match models[v].take() {
            Some(m) => Ok(m),
            None => fit_chain_model(table, &values, v, rng),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        values,
        PmmChain {
            visit_order,
            models,
        },
    ))
}

fn chain_prediction(row: &[f64], target: usize, coef: &[f64]) -> f64 {
    let mut acc = coef[0];
    let mut c = 1;
    for (u, x) in row.iter().enumerate() {
        if u != target {
            acc += coef[c] * x;
            c += 1;
        }
    }
    acc
}

fn fit_chain_model(
    table: &VarTable,
    values: &[f64],
    target: usize,
    rng: &mut SimRng,
) -> Result<ChainModel> {
    let w = table.width;
    let predictors: Vec<usize> = (0..w).filter(|&u| u != target).collect();
    let mut terms = vec![Term::Intercept];
    terms.extend(predictors.iter().map(|&u| Term::Covariate(u)));
    let spec = DesignSpec::new(terms)?;

    let rows: Vec<usize> = (0..table.n).filter(|&i| table.get(i, target).is_some()).collect();
    let t = predictors.len() + 1;
    let mut design = DMatrix::<f64>::zeros(rows.len(), t);
    let mut y = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        design[(r, 0)] = 1.0;
        for (c, &u) in predictors.iter().enumerate() {
            design[(r, c + 1)] = values[i * w + u];
        }
        y.push(values[i * w + target]);
    }
    let fit = fit_matrix(&design, &y, spec)?;
    let draw = fit.posterior_draw(rng);
    let mut donors: Vec<Donor> = rows
        .iter()
        .zip(&y)
        .map(|(&i, &value)| Donor {
            predicted: chain_prediction(&values[i * w..(i + 1) * w], target, &fit.coefficients),
            value,
        })
        .collect();
    donors.sort_by(|a, b| {
        a.predicted
            .partial_cmp(&b.predicted)
            .unwrap_or(Ordering::Equal)
            .then(a.value.partial_cmp(&b.value).unwrap_or(Ordering::Equal))
    });
    Ok(ChainModel {
        target,
        fit,
        draw,
        donors,
    })
}

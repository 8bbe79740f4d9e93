//! Prediction strategies for records with missing covariates.
//!
//! * PMKS: one OLS submodel per missingness pattern, fit only on that
//!   pattern's rows. Patterns at or below the size threshold borrow the CCS
//!   submodel instead.
//! * CCS: one submodel per pattern, fit on every row whose observed columns
//!   cover the pattern's observed columns.
//! * Complete case: one full model on fully observed rows; gaps are imputed.
//! * MI: one full model per completed dataset; predictions are averaged.
//! * MIMI: MI with missingness indicators and covariate-by-indicator terms.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition, Dataset, PatternId};
use crate::error::{Error, Result};
use crate::impute::{
    fit_engine_with_completions, impute_record, refit_mi_with_record, CompletedData,
    ImputationEngine, ImputationMethod, ImputationMode, ImputeOptions,
};
use crate::linear::{fit_least_squares, predict_linear, DesignSpec, LinearFit};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pmks,
    Ccs,
    CompleteCase,
    Mi,
    Mimi,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Pmks,
        Method::Ccs,
        Method::CompleteCase,
        Method::Mi,
        Method::Mimi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pmks => "pmks",
            Method::Ccs => "ccs",
            Method::CompleteCase => "complete-case",
            Method::Mi => "mi",
            Method::Mimi => "mimi",
        }
    }

    /// Engine used when none is configured.
    pub fn default_engine(self) -> Option<ImputationMethod> {
        match self {
            Method::Pmks | Method::Ccs => None,
            Method::CompleteCase => Some(ImputationMethod::CondMean),
            Method::Mi | Method::Mimi => Some(ImputationMethod::PmmMice),
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A method together with everything needed to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    /// Imputation engine; `None` picks [`Method::default_engine`].
    #[serde(default)]
    pub engine: Option<ImputationMethod>,
    #[serde(default)]
    pub imputation: ImputeOptions,
    /// PMKS sparsity threshold; `None` uses `2 (p_obs + 1)` per pattern.
    #[serde(default)]
    pub min_pattern_size: Option<usize>,
    /// Restrict MIMI interactions to `X_k M_k`.
    #[serde(default)]
    pub own_only: bool,
    /// Keep the training data so unseen patterns get an on-demand CCS fit.
    #[serde(default = "yes")]
    pub retain_training: bool,
}

fn yes() -> bool {
    true
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            engine: None,
            imputation: ImputeOptions::default(),
            min_pattern_size: None,
            own_only: false,
            retain_training: true,
        }
    }

    pub fn with_engine(mut self, engine: ImputationMethod) -> Self {
        self.engine = Some(engine);
        self
    }

    pub fn with_options(mut self, options: ImputeOptions) -> Self {
        self.imputation = options;
        self
    }

    pub fn engine_method(&self) -> Option<ImputationMethod> {
        self.engine.or(self.method.default_engine())
    }

    /// Short label such as `mi` or `complete-case[uncond-mean]` when the
    /// engine differs from the default.
    pub fn label(&self) -> String {
        match self.engine {
            Some(e) if Some(e) != self.method.default_engine() => {
                format!("{}[{}]", self.method.name(), e.name())
            }
            _ => self.method.name().to_string(),
        }
    }
}

/// How a prediction was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Submodel trained for the record's own pattern.
    Submodel,
    /// Sparse pattern served by its CCS submodel.
    SparseFallback,
    /// Pattern unseen in training; CCS fit on demand.
    OnDemandCcs,
    /// Pattern unseen in a sealed model; widest stored sub-pattern used.
    SubPattern(PatternId),
    /// Missing cells imputed before applying a full model.
    Imputed,
}

impl Route {
    pub fn fallback_used(self) -> bool {
        !matches!(self, Route::Submodel | Route::Imputed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub pattern: PatternId,
    pub route: Route,
}

/// Pattern-keyed submodels plus the optional training data behind the
/// unseen-pattern fallback.
#[derive(Debug, Serialize, Deserialize)]
pub struct SubmodelSet {
    pub p: usize,
    pub submodels: BTreeMap<PatternId, LinearFit>,
    #[serde(default)]
    pub training: Option<Dataset>,
    #[serde(skip)]
    on_demand: Mutex<BTreeMap<PatternId, Option<Arc<LinearFit>>>>,
}

impl Clone for SubmodelSet {
    fn clone(&self) -> Self {
        Self {
            p: self.p,
            submodels: self.submodels.clone(),
            training: self.training.clone(),
            on_demand: Mutex::new(self.on_demand.lock().expect("cache lock").clone()),
        }
    }
}

impl PartialEq for SubmodelSet {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.submodels == other.submodels && self.training == other.training
    }
}

impl SubmodelSet {
    fn new(p: usize, submodels: BTreeMap<PatternId, LinearFit>, training: Option<Dataset>) -> Self {
        Self {
            p,
            submodels,
            training,
            on_demand: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn is_sealed(&self) -> bool {
        self.training.is_none()
    }

    /// Drop the training data; unseen patterns then use the widest stored
    /// sub-pattern.
    pub fn seal(&mut self) {
        self.training = None;
        self.on_demand.lock().expect("cache lock").clear();
    }

    fn check_width(&self, values: &[Option<f64>]) -> Result<()> {
        if values.len() != self.p {
            return Err(Error::Dimension(format!(
                "record has {} cells, model expects {}",
                values.len(),
                self.p
            )));
        }
        Ok(())
    }

    /// Stored pattern with the most observed columns among those whose
    /// observed set lies inside `pattern`'s (lowest id on ties).
    pub fn widest_sub_pattern(&self, pattern: PatternId) -> Option<PatternId> {
        self.submodels
            .keys()
            .copied()
            .filter(|s| s.observed_subset_of(pattern))
            .max_by(|a, b| {
                a.n_observed(self.p)
                    .cmp(&b.n_observed(self.p))
                    .then(b.cmp(a))
            })
    }

    fn on_demand_fit(&self, pattern: PatternId) -> Result<Option<Arc<LinearFit>>> {
        let Some(train) = &self.training else {
            return Ok(None);
        };
        let mut cache = self.on_demand.lock().expect("cache lock");
        if let Some(hit) = cache.get(&pattern) {
            return Ok(hit.clone());
        }
        let fit = fit_ccs_submodel(train, pattern)?.map(Arc::new);
        if fit.is_some() {
            log::info!("pattern {pattern} unseen in training; fitted its CCS submodel on demand");
        }
        cache.insert(pattern, fit.clone());
        Ok(fit)
    }

    fn route(&self, values: &[Option<f64>], sparse: &BTreeSet<PatternId>) -> Result<Prediction> {
        self.check_width(values)?;
        let pattern = PatternId::of_record(values);
        if let Some(fit) = self.submodels.get(&pattern) {
            let route = if sparse.contains(&pattern) {
                Route::SparseFallback
            } else {
                Route::Submodel
            };
            return Ok(Prediction {
                value: predict_linear(fit, values, &[])?,
                pattern,
                route,
            });
        }
        if let Some(fit) = self.on_demand_fit(pattern)? {
            return Ok(Prediction {
                value: predict_linear(&fit, values, &[])?,
                pattern,
                route: Route::OnDemandCcs,
            });
        }
        let sub = self
            .widest_sub_pattern(pattern)
            .ok_or(Error::NoSubmodel(pattern))?;
        log::info!("pattern {pattern} has no submodel; using sub-pattern {sub}");
        Ok(Prediction {
            value: predict_linear(&self.submodels[&sub], values, &[])?,
            pattern,
            route: Route::SubPattern(sub),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmksModel {
    pub set: SubmodelSet,
    /// Patterns at or below the threshold, served by their CCS submodel.
    pub fallback_ids: BTreeSet<PatternId>,
    pub min_pattern_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcsModel {
    pub set: SubmodelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteCaseModel {
    pub fit: LinearFit,
    pub engine: ImputationEngine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiModel {
    pub fits: Vec<LinearFit>,
    pub engine: ImputationEngine,
    /// Needed only for refit-mode imputation.
    #[serde(default)]
    pub training: Option<Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimiModel {
    pub spec: DesignSpec,
    pub fits: Vec<LinearFit>,
    pub engine: ImputationEngine,
    #[serde(default)]
    pub training: Option<Dataset>,
}

/// Default sparsity threshold `2 (p_obs + 1)`.
pub fn default_min_pattern_size(pattern: PatternId, p: usize) -> usize {
    2 * (pattern.n_observed(p) + 1)
}

fn fit_pattern_rows(ds: &Dataset, pattern: PatternId, rows: &[usize]) -> Result<LinearFit> {
    let spec = DesignSpec::linear(true, &pattern.observed_columns(ds.p()));
    let y: Vec<f64> = rows.iter().map(|&i| ds.y()[i]).collect();
    fit_least_squares(rows.iter().map(|&i| (ds.row(i), &[][..])), &y, &spec)
}

/// CCS submodel for `pattern`: OLS over the pattern's observed columns using
/// every row that observes all of them. `None` when no row qualifies.
pub fn fit_ccs_submodel(ds: &Dataset, pattern: PatternId) -> Result<Option<LinearFit>> {
    let rows: Vec<usize> = (0..ds.n())
        .filter(|&i| pattern.observed_subset_of(ds.pattern(i)))
        .collect();
    if rows.is_empty() {
        return Ok(None);
    }
    fit_pattern_rows(ds, pattern, &rows).map(Some)
}

pub fn fit_pmks(ds: &Dataset, min_pattern_size: Option<usize>, retain_training: bool) -> Result<PmksModel> {
    let p = ds.p();
    let mut submodels = BTreeMap::new();
    let mut fallback_ids = BTreeSet::new();
    for (pattern, rows) in partition(ds).iter() {
        let threshold = min_pattern_size.unwrap_or_else(|| default_min_pattern_size(pattern, p));
        let fit = if rows.len() > threshold {
            fit_pattern_rows(ds, pattern, rows)?
        } else {
            fallback_ids.insert(pattern);
            fit_ccs_submodel(ds, pattern)?.expect("pattern's own rows qualify")
        };
        submodels.insert(pattern, fit);
    }
    Ok(PmksModel {
        set: SubmodelSet::new(p, submodels, retain_training.then(|| ds.clone())),
        fallback_ids,
        min_pattern_size,
    })
}

pub fn fit_ccs(ds: &Dataset, retain_training: bool) -> Result<CcsModel> {
    let mut submodels = BTreeMap::new();
    for (pattern, _) in partition(ds).iter() {
        match fit_ccs_submodel(ds, pattern)? {
            Some(fit) => {
                submodels.insert(pattern, fit);
            }
            None => log::warn!("no rows observe every column of pattern {pattern}; omitted"),
        }
    }
    Ok(CcsModel {
        set: SubmodelSet::new(ds.p(), submodels, retain_training.then(|| ds.clone())),
    })
}

pub fn fit_complete_case(ds: &Dataset, engine: ImputationEngine) -> Result<CompleteCaseModel> {
    let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.pattern(i).is_complete()).collect();
    let needed = ds.p() + 2;
    if rows.len() < needed {
        return Err(Error::TooFewCompleteRows {
            available: rows.len(),
            needed,
        });
    }
    let fit = fit_pattern_rows(ds, PatternId::COMPLETE, &rows)?;
    Ok(CompleteCaseModel { fit, engine })
}

fn fit_completions(
    ds: &Dataset,
    spec: &DesignSpec,
    completed: &CompletedData,
    use_indicators: bool,
) -> Result<Vec<LinearFit>> {
    let masks: Vec<Vec<bool>> = (0..ds.n())
        .map(|i| if use_indicators { ds.mask_row(i) } else { vec![] })
        .collect();
    completed
        .completions
        .iter()
        .map(|c| {
            fit_least_squares(
                (0..ds.n()).map(|i| (c.row(i), masks[i].as_slice())),
                ds.y(),
                spec,
            )
        })
        .collect()
}

/// One full-design fit per completion of `completed`.
pub fn fit_mi(ds: &Dataset, engine: ImputationEngine, completed: &CompletedData) -> Result<MiModel> {
    let spec = DesignSpec::full(ds.p());
    let fits = fit_completions(ds, &spec, completed, false)?;
    Ok(MiModel {
        fits,
        engine,
        training: None,
    })
}

/// One fit of the indicator-augmented design per completion. Indicators come
/// from the training mask; only columns with training missingness get terms.
pub fn fit_mimi(
    ds: &Dataset,
    engine: ImputationEngine,
    completed: &CompletedData,
    own_only: bool,
) -> Result<MimiModel> {
    let spec = DesignSpec::missing_indicator(ds.p(), &ds.columns_with_missing(), own_only);
    let fits = fit_completions(ds, &spec, completed, true)?;
    Ok(MimiModel {
        spec,
        fits,
        engine,
        training: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "model", rename_all = "kebab-case")]
pub enum Predictor {
    Pmks(PmksModel),
    Ccs(CcsModel),
    CompleteCase(CompleteCaseModel),
    Mi(MiModel),
    Mimi(MimiModel),
}

/// Fit `spec` on `ds`; `seed` drives any stochastic imputation.
pub fn fit_method(ds: &Dataset, spec: &MethodSpec, seed: u64) -> Result<Predictor> {
    let engine_fit = |method: ImputationMethod| {
        fit_engine_with_completions(ds, method, &spec.imputation, seed)
    };
    let retained = |keep: bool| (keep && spec.retain_training).then(|| ds.clone());
    let refit = spec.imputation.mode == ImputationMode::Refit;
    Ok(match spec.method {
        Method::Pmks => Predictor::Pmks(fit_pmks(ds, spec.min_pattern_size, spec.retain_training)?),
        Method::Ccs => Predictor::Ccs(fit_ccs(ds, spec.retain_training)?),
        Method::CompleteCase => {
            let (engine, _) = engine_fit(spec.engine_method().expect("default engine"))?;
            Predictor::CompleteCase(fit_complete_case(ds, engine)?)
        }
        Method::Mi => {
            let (engine, completed) = engine_fit(spec.engine_method().expect("default engine"))?;
            let mut model = fit_mi(ds, engine, &completed)?;
            model.training = retained(refit);
            Predictor::Mi(model)
        }
        Method::Mimi => {
            let (engine, completed) = engine_fit(spec.engine_method().expect("default engine"))?;
            let mut model = fit_mimi(ds, engine, &completed, spec.own_only)?;
            model.training = retained(refit);
            Predictor::Mimi(model)
        }
    })
}

fn imputed_completions<G: Rng + ?Sized>(
    engine: &ImputationEngine,
    training: Option<&Dataset>,
    values: &[Option<f64>],
    rng: &mut G,
) -> Result<Vec<Vec<f64>>> {
    if engine.method == ImputationMethod::PmmMice && engine.options.mode == ImputationMode::Refit {
        let train = training.ok_or_else(|| {
            Error::Config("refit imputation needs a model that retains its training data".into())
        })?;
        return refit_mi_with_record(train, values, &engine.options, rng.random());
    }
    impute_record(engine, values, rng)
}

fn average(values: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    Ok(sum / n as f64)
}

impl Predictor {
    pub fn method(&self) -> Method {
        match self {
            Predictor::Pmks(_) => Method::Pmks,
            Predictor::Ccs(_) => Method::Ccs,
            Predictor::CompleteCase(_) => Method::CompleteCase,
            Predictor::Mi(_) => Method::Mi,
            Predictor::Mimi(_) => Method::Mimi,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Predictor::Pmks(m) => m.set.p,
            Predictor::Ccs(m) => m.set.p,
            Predictor::CompleteCase(m) => m.engine.p,
            Predictor::Mi(m) => m.engine.p,
            Predictor::Mimi(m) => m.engine.p,
        }
    }

    /// Drop retained training data so the model serializes compactly.
    pub fn seal(&mut self) {
        match self {
            Predictor::Pmks(m) => m.set.seal(),
            Predictor::Ccs(m) => m.set.seal(),
            Predictor::CompleteCase(_) => {}
            Predictor::Mi(m) => m.training = None,
            Predictor::Mimi(m) => m.training = None,
        }
    }

    pub fn is_sealed(&self) -> bool {
        match self {
            Predictor::Pmks(m) => m.set.is_sealed(),
            Predictor::Ccs(m) => m.set.is_sealed(),
            Predictor::CompleteCase(_) => true,
            Predictor::Mi(m) => m.training.is_none(),
            Predictor::Mimi(m) => m.training.is_none(),
        }
    }

    /// Predict the response for one partially observed record.
    pub fn predict_one<G: Rng + ?Sized>(&self, values: &[Option<f64>], rng: &mut G) -> Result<Prediction> {
        if values.len() != self.p() {
            return Err(Error::Dimension(format!(
                "record has {} cells, model expects {}",
                values.len(),
                self.p()
            )));
        }
        let pattern = PatternId::of_record(values);
        let imputed = |value| Prediction {
            value,
            pattern,
            route: Route::Imputed,
        };
        match self {
            Predictor::Pmks(m) => m.set.route(values, &m.fallback_ids),
            Predictor::Ccs(m) => m.set.route(values, &BTreeSet::new()),
            Predictor::CompleteCase(m) => {
                let completions = impute_record(&m.engine, values, rng)?;
                let value = average(completions.iter().map(|c| predict_linear(&m.fit, c, &[])))?;
                Ok(imputed(value))
            }
            Predictor::Mi(m) => {
                let completions = imputed_completions(&m.engine, m.training.as_ref(), values, rng)?;
                let value = average(
                    m.fits
                        .iter()
                        .enumerate()
                        .map(|(c, fit)| predict_linear(fit, &completions[c % completions.len()], &[])),
                )?;
                Ok(imputed(value))
            }
            Predictor::Mimi(m) => {
                let completions = imputed_completions(&m.engine, m.training.as_ref(), values, rng)?;
                let mask: Vec<bool> = values.iter().map(Option::is_none).collect();
                let value = average(
                    m.fits
                        .iter()
                        .enumerate()
                        .map(|(c, fit)| predict_linear(fit, &completions[c % completions.len()], &mask)),
                )?;
                Ok(imputed(value))
            }
        }
    }

    /// Predict every row of `ds`, one record at a time. Row `i` uses its own
    /// random stream derived from `seed`, so results do not depend on
    /// scheduling.
    pub fn predict_dataset(&self, ds: &Dataset, seed: u64) -> Result<Vec<Prediction>> {
        (0..ds.n())
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(seed, i as u64));
                self.predict_one(ds.row(i), &mut rng)
            })
            .collect()
    }

    pub fn submodels(&self) -> Option<&BTreeMap<PatternId, LinearFit>> {
        match self {
            Predictor::Pmks(m) => Some(&m.set.submodels),
            Predictor::Ccs(m) => Some(&m.set.submodels),
            _ => None,
        }
    }
}

/// Across-completion summary of one auxiliary coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub term: String,
    pub mean: f64,
    pub sd: f64,
}

/// Mean and standard deviation over completions of every indicator and
/// interaction coefficient. Descriptive only.
pub fn delta_report(model: &MimiModel, col_names: &[String]) -> Vec<DeltaRow> {
    let m = model.fits.len();
    model
        .spec
        .terms()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_auxiliary())
        .map(|(idx, term)| {
            let vals: Vec<f64> = model.fits.iter().map(|f| f.coefficients[idx]).collect();
            let mean = vals.iter().sum::<f64>() / m as f64;
            let sd = if m > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
            } else {
                0.0
            };
            DeltaRow {
                term: term.label(col_names),
                mean,
                sd,
            }
        })
        .collect()
}

/// What a serialized model does with patterns it has no submodel for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackPolicy {
    OnDemandCcs,
    WidestSubPattern,
    Impute,
}

/// Self-describing on-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEnvelope {
    pub method: Method,
    pub p: usize,
    pub response: String,
    pub col_names: Vec<String>,
    pub fallback_policy: FallbackPolicy,
    pub toolkit_version: String,
    pub predictor: Predictor,
}

impl ModelEnvelope {
    pub fn new(predictor: Predictor, train: &Dataset) -> Self {
        let fallback_policy = match (&predictor, predictor.is_sealed()) {
            (Predictor::Pmks(_) | Predictor::Ccs(_), false) => FallbackPolicy::OnDemandCcs,
            (Predictor::Pmks(_) | Predictor::Ccs(_), true) => FallbackPolicy::WidestSubPattern,
            _ => FallbackPolicy::Impute,
        };
        Self {
            method: predictor.method(),
            p: predictor.p(),
            response: train.response_name().to_string(),
            col_names: train.col_names().to_vec(),
            fallback_policy,
            toolkit_version: crate::VERSION.to_string(),
            predictor,
        }
    }
}

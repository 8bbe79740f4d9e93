//! Minimum-norm least squares over a declared term structure.
//!
//! Every fit goes through a thin SVD of the expanded design. Singular values
//! below `RANK_TOLERANCE * s_max` are treated as zero, which gives the
//! minimum-norm solution and a Gram pseudo-inverse for rank-deficient designs.
//! Fitted values do not depend on how the null space is resolved.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RANK_TOLERANCE: f64 = 1e-10;

/// Read access to a record's covariate values, complete or partial.
pub trait RowValues {
    fn get(&self, j: usize) -> Option<f64>;
    fn width(&self) -> usize;
}

impl RowValues for [f64] {
    fn get(&self, j: usize) -> Option<f64> {
        self.get(j).copied()
    }
    fn width(&self) -> usize {
        self.len()
    }
}

impl RowValues for [Option<f64>] {
    fn get(&self, j: usize) -> Option<f64> {
        self.get(j).copied().flatten()
    }
    fn width(&self) -> usize {
        self.len()
    }
}

impl RowValues for Vec<f64> {
    fn get(&self, j: usize) -> Option<f64> {
        self.as_slice().get(j).copied()
    }
    fn width(&self) -> usize {
        self.len()
    }
}

impl RowValues for Vec<Option<f64>> {
    fn get(&self, j: usize) -> Option<f64> {
        self.as_slice().get(j).copied().flatten()
    }
    fn width(&self) -> usize {
        self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Covariate(usize),
    /// Missingness indicator of a covariate.
    Indicator(usize),
    /// Covariate value times another covariate's missingness indicator.
    Interaction { covariate: usize, indicator: usize },
}

impl Term {
    pub fn is_auxiliary(self) -> bool {
        matches!(self, Term::Indicator(_) | Term::Interaction { .. })
    }

    pub fn label(self, names: &[String]) -> String {
        let name = |j: usize| names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1));
        match self {
            Term::Intercept => "(Intercept)".into(),
            Term::Covariate(j) => name(j),
            Term::Indicator(k) => format!("M[{}]", name(k)),
            Term::Interaction {
                covariate,
                indicator,
            } => format!("{}:M[{}]", name(covariate), name(indicator)),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label(&[]))
    }
}

/// Ordered list of model terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Term>", into = "Vec<Term>")]
pub struct DesignSpec {
    terms: Vec<Term>,
}

impl TryFrom<Vec<Term>> for DesignSpec {
    type Error = Error;
    fn try_from(terms: Vec<Term>) -> Result<Self> {
        DesignSpec::new(terms)
    }
}

impl From<DesignSpec> for Vec<Term> {
    fn from(spec: DesignSpec) -> Self {
        spec.terms
    }
}

impl DesignSpec {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (pos, t) in terms.iter().enumerate() {
            if !seen.insert(*t) {
                return Err(Error::Config(format!("duplicate design term {t}")));
            }
            if *t == Term::Intercept && pos != 0 {
                return Err(Error::Config("intercept must be the first term".into()));
            }
        }
        Ok(Self { terms })
    }

    /// Intercept (optional) followed by the listed covariates.
    pub fn linear(intercept: bool, columns: &[usize]) -> Self {
        let mut terms = Vec::with_capacity(columns.len() + 1);
        if intercept {
            terms.push(Term::Intercept);
        }
        terms.extend(columns.iter().map(|&j| Term::Covariate(j)));
        Self::new(terms).expect("distinct columns")
    }

    pub fn full(p: usize) -> Self {
        Self::linear(true, &(0..p).collect::<Vec<_>>())
    }

    /// Intercept, all covariates, an indicator for each column in `missing_cols`,
    /// and covariate × indicator products. With `own_only` only `X_k·M_k` is kept;
    /// otherwise every `X_j·M_k` is included. Own products come first.
    pub fn missing_indicator(p: usize, missing_cols: &[usize], own_only: bool) -> Self {
        let mut terms = vec![Term::Intercept];
        terms.extend((0..p).map(Term::Covariate));
        terms.extend(missing_cols.iter().map(|&k| Term::Indicator(k)));
        terms.extend(missing_cols.iter().map(|&k| Term::Interaction {
            covariate: k,
            indicator: k,
        }));
        if !own_only {
            for &k in missing_cols {
                for j in (0..p).filter(|&j| j != k) {
                    terms.push(Term::Interaction {
                        covariate: j,
                        indicator: k,
                    });
                }
            }
        }
        Self::new(terms).expect("distinct terms")
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn has_intercept(&self) -> bool {
        self.terms.first() == Some(&Term::Intercept)
    }

    pub fn covariate_columns(&self) -> Vec<usize> {
        self.terms
            .iter()
            .filter_map(|t| match t {
                Term::Covariate(j) => Some(*j),
                _ => None,
            })
            .collect()
    }

    /// Covariates whose values the design reads (including inside products).
    pub fn referenced_covariates(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self
            .terms
            .iter()
            .filter_map(|t| match t {
                Term::Covariate(j) => Some(*j),
                Term::Interaction { covariate, .. } => Some(*covariate),
                _ => None,
            })
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    pub fn indicator_columns(&self) -> Vec<usize> {
        self.terms
            .iter()
            .filter_map(|t| match t {
                Term::Indicator(k) => Some(*k),
                _ => None,
            })
            .collect()
    }

    pub fn interactions(&self) -> Vec<(usize, usize)> {
        self.terms
            .iter()
            .filter_map(|t| match t {
                Term::Interaction {
                    covariate,
                    indicator,
                } => Some((*covariate, *indicator)),
                _ => None,
            })
            .collect()
    }

    /// Expand one record into `out`. `indicators[k]` is true when covariate `k`
    /// was originally missing; it is only read for indicator terms.
    pub fn expand_into<R: RowValues + ?Sized>(
        &self,
        values: &R,
        indicators: &[bool],
        out: &mut [f64],
    ) -> Result<()> {
        if out.len() != self.terms.len() {
            return Err(Error::Dimension(format!(
                "output buffer {} for {} terms",
                out.len(),
                self.terms.len()
            )));
        }
        let value = |j: usize| values.get(j).ok_or(Error::MissingCovariate(j));
        let flag = |k: usize| {
            indicators
                .get(k)
                .map(|&m| if m { 1.0 } else { 0.0 })
                .ok_or_else(|| Error::Dimension(format!("no indicator for column {k}")))
        };
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            *slot = match *term {
                Term::Intercept => 1.0,
                Term::Covariate(j) => value(j)?,
                Term::Indicator(k) => flag(k)?,
                Term::Interaction {
                    covariate,
                    indicator,
                } => {
                    let m = flag(indicator)?;
                    if m == 0.0 {
                        0.0
                    } else {
                        value(covariate)?
                    }
                }
            };
        }
        Ok(())
    }

    pub fn expand<R: RowValues + ?Sized>(&self, values: &R, indicators: &[bool]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.terms.len()];
        self.expand_into(values, indicators, &mut out)?;
        Ok(out)
    }

    pub fn design_matrix<'a, R, I>(&self, rows: I) -> Result<DMatrix<f64>>
    where
        R: RowValues + ?Sized + 'a,
        I: IntoIterator<Item = (&'a R, &'a [bool])>,
    {
        let t = self.terms.len();
        let mut data: Vec<f64> = Vec::new();
        let mut buf = vec![0.0; t];
        let mut n = 0;
        for (values, indicators) in rows {
            self.expand_into(values, indicators, &mut buf)?;
            data.extend_from_slice(&buf);
            n += 1;
        }
        Ok(DMatrix::from_row_slice(n, t, &data))
    }
}

/// Least-squares fit with the quantities needed for prediction, posterior
/// draws and analytic prediction error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub spec: DesignSpec,
    pub coefficients: Vec<f64>,
    pub rank: usize,
    /// `RSS / (n_fit - rank)`; `None` when `n_fit <= rank`.
    pub sigma2: Option<f64>,
    pub rss: f64,
    pub n_fit: usize,
    /// Pseudo-inverse of `X'X`, row-major.
    pub gram_inverse: Vec<Vec<f64>>,
    /// `V_r Σ_r⁻¹` so that `root · rootᵀ = gram_inverse`.
    pub gram_root: Vec<Vec<f64>>,
}

impl LinearFit {
    pub fn n_terms(&self) -> usize {
        self.coefficients.len()
    }

    pub fn sigma2(&self) -> Result<f64> {
        self.sigma2.ok_or(Error::UndefinedVariance {
            n_fit: self.n_fit,
            rank: self.rank,
        })
    }

    pub fn predict_row(&self, design_row: &[f64]) -> f64 {
        design_row
            .iter()
            .zip(&self.coefficients)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `d' G⁻ d`.
    pub fn leverage(&self, design_row: &[f64]) -> f64 {
        quad_form(&self.gram_inverse, design_row)
    }

    /// One draw from the noninformative-prior posterior: `σ*² = RSS/χ²(df)`,
    /// `β* ~ N(β̂, σ*² G⁻)`. With no residual degrees of freedom the OLS
    /// coefficients are returned.
    pub fn posterior_draw<G: Rng + ?Sized>(&self, rng: &mut G) -> Vec<f64> {
        let df = self.n_fit.saturating_sub(self.rank);
        if df == 0 || self.rank == 0 {
            return self.coefficients.clone();
        }
        let chi = ChiSquared::new(df as f64).expect("positive df");
        let sigma_star = (self.rss / chi.sample(rng).max(f64::MIN_POSITIVE)).sqrt();
        let z: Vec<f64> = (0..self.rank).map(|_| rng.sample(StandardNormal)).collect();
        self.coefficients
            .iter()
            .zip(&self.gram_root)
            .map(|(b, row)| {
                b + sigma_star * row.iter().zip(&z).map(|(l, z)| l * z).sum::<f64>()
            })
            .collect()
    }
}

pub fn quad_form(matrix: &[Vec<f64>], v: &[f64]) -> f64 {
    matrix
        .iter()
        .zip(v)
        .map(|(row, vi)| vi * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Fit an already expanded design.
pub fn fit_matrix(design: &DMatrix<f64>, y: &[f64], spec: DesignSpec) -> Result<LinearFit> {
    let (n, t) = design.shape();
    if n == 0 {
        return Err(Error::EmptyFit);
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} design rows", y.len())));
    }
    if t != spec.len() {
        return Err(Error::Dimension(format!(
            "design has {t} columns for {} terms",
            spec.len()
        )));
    }
    if t == 0 {
        let rss: f64 = y.iter().map(|v| v * v).sum();
        return Ok(LinearFit {
            spec,
            coefficients: vec![],
            rank: 0,
            sigma2: Some(rss / n as f64),
            rss,
            n_fit: n,
            gram_inverse: vec![],
            gram_root: vec![],
        });
    }

    // nalgebra's SVD can return inaccurate factors for rank-deficient input,
    // so the decomposition itself is done by faer.
    let svd = faer::Mat::<f64>::from_fn(n, t, |i, j| design[(i, j)])
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let s_max = (0..s.nrows()).map(|i| s[i]).fold(0.0_f64, f64::max);
    let tol = RANK_TOLERANCE * s_max;
    let keep: Vec<usize> = (0..s.nrows()).filter(|&i| s_max > 0.0 && s[i] > tol).collect();
    let rank = keep.len();

    let mut coef = DVector::<f64>::zeros(t);
    let mut root = DMatrix::<f64>::zeros(t, rank);
    for (c, &i) in keep.iter().enumerate() {
        let proj = (0..n).map(|r| u[(r, i)] * y[r]).sum::<f64>() / s[i];
        for k in 0..t {
            coef[k] += v[(k, i)] * proj;
            root[(k, c)] = v[(k, i)] / s[i];
        }
    }
    let gram = &root * root.transpose();

    let fitted = design * &coef;
    let rss: f64 = fitted.iter().zip(y).map(|(f, y)| (y - f) * (y - f)).sum();
    let sigma2 = (n > rank).then(|| rss / (n - rank) as f64);

    Ok(LinearFit {
        spec,
        coefficients: coef.iter().copied().collect(),
        rank,
        sigma2,
        rss,
        n_fit: n,
        gram_inverse: (0..t).map(|r| gram.row(r).iter().copied().collect()).collect(),
        gram_root: (0..t).map(|r| root.row(r).iter().copied().collect()).collect(),
    })
}

/// Expand `rows` with `spec` and fit. Each row pairs its values with its
/// missingness indicators (which may be empty when the spec has none).
pub fn fit_least_squares<'a, R, I>(rows: I, y: &[f64], spec: &DesignSpec) -> Result<LinearFit>
where
    R: RowValues + ?Sized + 'a,
    I: IntoIterator<Item = (&'a R, &'a [bool])>,
{
    let design = spec.design_matrix(rows)?;
    fit_matrix(&design, y, spec.clone())
}

pub fn predict_linear<R: RowValues + ?Sized>(
    fit: &LinearFit,
    values: &R,
    indicators: &[bool],
) -> Result<f64> {
    let row = fit.spec.expand(values, indicators)?;
    Ok(fit.predict_row(&row))
}

//! Prediction with missing covariates: pattern mixture kernel submodels (PMKS)
//! alongside complete-case, complete-case submodel, multiple imputation and
//! missing-indicator MI comparators, plus the simulation and cross-validation
//! machinery used to compare them.

pub mod data;
pub mod error;
pub mod eval;
pub mod impute;
pub mod linear;
pub mod mechanism;
pub mod predict;
pub mod rng;
pub mod synthetic;

pub use data::{load_csv, load_records, partition, save_csv, Dataset, PatternId, PatternIndex};
pub use error::{Error, Result};
pub use eval::{
    figure1_experiment, kfold_cv, pattern_losses, run_simulation, Figure1Config, PatternLossReport,
    SimConfig, SimReport,
};
pub use impute::{ImputationEngine, ImputationMethod, ImputationMode, ImputeOptions};
pub use linear::{fit_least_squares, DesignSpec, LinearFit, Term};
pub use mechanism::{Formulation, GenConfig, MechanismKind, MechanismSpec};
pub use predict::{fit_method, Method, MethodSpec, ModelEnvelope, Prediction, Predictor, Route};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

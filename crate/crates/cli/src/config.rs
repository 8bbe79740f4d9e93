use std::path::Path;

use patternkit_core::{ImputationMethod, ImputeOptions, Method, MethodSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

fn na() -> String {
    "NA".into()
}

fn yes() -> bool {
    true
}

/// Options for `fit` and `evaluate`. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "na")]
    pub na_token: String,
    /// Seed for the imputation engine (`fit` only; `evaluate` takes `--seed`).
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub engine: Option<ImputationMethod>,
    #[serde(default)]
    pub imputation: ImputeOptions,
    #[serde(default)]
    pub min_pattern_size: Option<usize>,
    #[serde(default)]
    pub own_only: bool,
    /// Keep the training rows in the model file so unseen patterns get an
    /// on-demand fit; `false` seals the model.
    #[serde(default = "yes")]
    pub retain_training: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            na_token: na(),
            seed: 0,
            engine: None,
            imputation: ImputeOptions::default(),
            min_pattern_size: None,
            own_only: false,
            retain_training: true,
        }
    }
}

impl FitConfig {
    pub fn method_spec(&self, method: Method) -> MethodSpec {
        MethodSpec {
            method,
            engine: self.engine,
            imputation: self.imputation.clone(),
            min_pattern_size: self.min_pattern_size,
            own_only: self.own_only,
            retain_training: self.retain_training,
        }
    }
}

/// Sidecar written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub toolkit_version: String,
    pub seed: u64,
    /// SHA-256 of the effective configuration as written under `config`.
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

pub fn parse_method(name: &str) -> Result<Method, Failure> {
    name.parse().map_err(|_| {
        let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        Failure::invalid(format!("unknown method `{name}`; expected one of {}", known.join(", ")))
    })
}

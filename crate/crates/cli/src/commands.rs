use std::path::Path;

use patternkit_core::data::{format_g17, load_records};
use patternkit_core::eval::figure1_csv;
use patternkit_core::rng::{derive_seed, rng_from_seed};
use patternkit_core::{
    figure1_experiment, fit_method, kfold_cv, load_csv, run_simulation, Error, Figure1Config,
    ModelEnvelope, Route, SimConfig,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{parse_method, read_json, FitConfig};
use crate::output::{sidecar_path, write_atomic, MetadataBuilder};
use crate::Failure;

pub const SIMULATION_CSV: &str = "simulation.csv";
pub const IMPUTATION_CSV: &str = "imputation_error.csv";
pub const FIGURE1_CSV: &str = "figure1.csv";
pub const METADATA_JSON: &str = "metadata.json";

pub fn simulate(config: &Path, reps: Option<usize>, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg: SimConfig = read_json(config)?;
    if let Some(r) = reps {
        cfg.reps = r;
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let master = cfg.seed.expect("validated");
    let mut meta = MetadataBuilder::new("simulate", master, &cfg)?;
    meta.input(config)?;

    let report = run_simulation(&cfg)?;
    write_atomic(&out.join(SIMULATION_CSV), report.to_csv().as_bytes())?;
    meta.output(SIMULATION_CSV);
    if !cfg.engines.is_empty() {
        write_atomic(&out.join(IMPUTATION_CSV), report.imputation_csv().as_bytes())?;
        meta.output(IMPUTATION_CSV);
    }
    if let Some(f) = &cfg.figure1 {
        // the experiment's own seed acts as a stream index under the master seed
        let run = Figure1Config {
            seed: derive_seed(master, f.seed),
            ..f.clone()
        };
        let points = figure1_experiment(&run)?;
        write_atomic(&out.join(FIGURE1_CSV), figure1_csv(&points).as_bytes())?;
        meta.output(FIGURE1_CSV);
    }
    for (scenario, label, failed) in &report.failures {
        let note = format!("{scenario}/{label}: {failed} of {} replicates failed and were skipped", cfg.reps);
        log::warn!("{note}");
        meta.note(note);
    }
    meta.write(&out.join(METADATA_JSON))
}

pub fn fit(train: &Path, response: &str, method: &str, config: Option<&Path>, model_out: &Path) -> Result<(), Failure> {
    let method = parse_method(method)?;
    let cfg: FitConfig = config.map(read_json).transpose()?.unwrap_or_default();
    let ds = load_csv(train, response, &cfg.na_token)?;
    let predictor = fit_method(&ds, &cfg.method_spec(method), cfg.seed)?;
    let envelope = ModelEnvelope::new(predictor, &ds);
    let text = serde_json::to_string(&envelope).map_err(|e| Failure::runtime(format!("cannot serialize model: {e}")))?;
    write_atomic(model_out, text.as_bytes())?;

    let effective = json!({ "method": method.name(), "response": response, "options": cfg });
    let mut meta = MetadataBuilder::new("fit", cfg.seed, &effective)?;
    meta.input(train)?;
    if let Some(c) = config {
        meta.input(c)?;
    }
    meta.output(model_out.display().to_string());
    meta.write(&sidecar_path(model_out))
}

fn route_label(route: Route) -> String {
    match route {
        Route::Submodel => "submodel".into(),
        Route::SparseFallback => "sparse_fallback".into(),
        Route::OnDemandCcs => "on_demand_ccs".into(),
        Route::SubPattern(p) => format!("sub_pattern:{}", p.0),
        Route::Imputed => "imputed".into(),
    }
}

fn error_code(e: &Error) -> &'static str {
    match e {
        Error::NoSubmodel(_) => "no_submodel",
        Error::Dimension(_) => "dimension",
        Error::InsufficientDonors { .. } | Error::InsufficientRows { .. } | Error::AllMissingColumn(_) => {
            "imputation_failed"
        }
        _ => "failed",
    }
}

pub fn predict(model: &Path, input: &Path, out: &Path, seed: u64, na_token: &str) -> Result<(), Failure> {
    let envelope: ModelEnvelope = read_json(model)?;
    let table = load_records(input, &envelope.col_names, Some(&envelope.response), na_token)?;
    let predictor = &envelope.predictor;
    let results: Vec<_> = table
        .records
        .par_iter()
        .enumerate()
        .map(|(i, record)| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            predictor.predict_one(record, &mut rng)
        })
        .collect();

    let mut text = String::from("row,prediction,pattern,fallback_used,route,error\n");
    let mut failed = 0;
    for (i, (record, result)) in table.records.iter().zip(&results).enumerate() {
        let pattern = patternkit_core::PatternId::of_record(record);
        match result {
            Ok(p) => text.push_str(&format!(
                "{},{},{},{},{},\n",
                i + 1,
                format_g17(p.value),
                p.pattern.0,
                p.route.fallback_used(),
                route_label(p.route)
            )),
            Err(e) => {
                failed += 1;
                log::warn!("row {}: {e}", i + 1);
                text.push_str(&format!("{},,{},,,{}\n", i + 1, pattern.0, error_code(e)));
            }
        }
    }
    write_atomic(out, text.as_bytes())?;

    let effective = json!({ "model": model.display().to_string(), "na_token": na_token });
    let mut meta = MetadataBuilder::new("predict", seed, &effective)?;
    meta.input(model)?.input(input)?;
    meta.output(out.display().to_string());
    if failed > 0 {
        meta.note(format!("{failed} of {} rows could not be predicted", results.len()));
    }
    meta.write(&sidecar_path(out))?;
    if failed > 0 {
        return Err(Failure::runtime(format!(
            "{failed} of {} rows could not be predicted; see the error column of {}",
            results.len(),
            out.display()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    data: &Path,
    response: &str,
    method: &str,
    folds: usize,
    seed: u64,
    config: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let method = parse_method(method)?;
    let cfg: FitConfig = config.map(read_json).transpose()?.unwrap_or_default();
    let ds = load_csv(data, response, &cfg.na_token)?;
    let report = kfold_cv(&ds, &cfg.method_spec(method), folds, seed)?;
    write_atomic(out, report.to_csv().as_bytes())?;

    let effective = json!({
        "method": method.name(),
        "response": response,
        "folds": folds,
        "options": cfg,
    });
    let mut meta = MetadataBuilder::new("evaluate", seed, &effective)?;
    meta.input(data)?;
    if let Some(c) = config {
        meta.input(c)?;
    }
    meta.output(out.display().to_string());
    meta.write(&sidecar_path(out))
}

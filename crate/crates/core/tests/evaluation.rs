mod common;

use nalgebra::DMatrix;
use patternkit_core::eval::{epe_small, stratified_folds, EngineSpec, Scenario};
use patternkit_core::impute::ImputationMethod;
use patternkit_core::linear::{fit_matrix, DesignSpec};
use patternkit_core::mechanism::{gen_predictors, GenConfig, MechanismKind, MechanismSpec};
use patternkit_core::rng::rng_from_seed;
use patternkit_core::{
    figure1_experiment, kfold_cv, run_simulation, Figure1Config, Method, MethodSpec, PatternId, SimConfig,
};
use rand::Rng;
use rand_distr::StandardNormal;

/// With one row per fold, the CV loss is the mean squared deleted residual
/// `e_i / (1 - h_ii)`.
#[test]
fn leave_one_out_matches_the_hat_matrix_shortcut() {
    let n = 20;
    let ds = common::patterned_dataset(&mut rng_from_seed(1), 2, n, &[PatternId::COMPLETE]);
    let report = kfold_cv(&ds, &MethodSpec::new(Method::Pmks), n, 3).unwrap();
    let x = DMatrix::from_fn(n, 3, |i, c| if c == 0 { 1.0 } else { ds.value(i, c - 1).unwrap() });
    let xt = x.transpose();
    let hat = &x * (&xt * &x).try_inverse().unwrap() * &xt;
    let fitted = &hat * nalgebra::DVector::from_column_slice(ds.y());
    let oracle = (0..n)
        .map(|i| ((ds.y()[i] - fitted[i]) / (1.0 - hat[(i, i)])).powi(2))
        .sum::<f64>()
        / n as f64;
    assert!((report.weighted_total - oracle).abs() < 1e-8 * oracle, "{} vs {oracle}", report.weighted_total);
}

#[test]
fn folds_are_balanced_within_every_pattern() {
    let ds = common::patterned_dataset(&mut rng_from_seed(2), 3, 203, &common::all_patterns(3));
    let folds = stratified_folds(&ds, 10, 4).unwrap();
    let mut all: Vec<usize> = folds.concat();
    all.sort_unstable();
    assert_eq!(all, (0..ds.n()).collect::<Vec<_>>());
    for pattern in common::all_patterns(3) {
        let counts: Vec<usize> = folds
            .iter()
            .map(|f| f.iter().filter(|&&i| ds.pattern(i) == pattern).count())
            .collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{pattern:?}: {counts:?}");
    }
    assert_eq!(stratified_folds(&ds, 10, 4).unwrap(), folds);
    assert!(stratified_folds(&ds, 1, 4).is_err());
}

/// Analytic error of the model that drops x2, checked by refitting it on
/// fresh training noise over a fixed design and scoring a fresh test outcome.
#[test]
fn small_model_error_matches_monte_carlo() {
    let beta = [1.0, 3.0, 1.0];
    let cfg = GenConfig::bivariate(60, [3.0, 3.0], 0.5, beta);
    let mut rng = rng_from_seed(5);
    let x = gen_predictors(&cfg, &mut rng).unwrap();
    let design = DMatrix::from_fn(cfg.n, 2, |i, c| if c == 0 { 1.0 } else { x[i][0] });
    let spec = DesignSpec::linear(true, &[0]);
    let mean: Vec<f64> = x.iter().map(|r| cfg.linear_mean(r)).collect();
    let projection = fit_matrix(&design, &mean, spec.clone()).unwrap();
    let point = [4.0, 1.5];
    let analytic = epe_small(&projection, &projection.coefficients, &beta, 1.0, &point).unwrap();

    let draws = 20_000;
    let truth = cfg.linear_mean(&point);
    let errors: Vec<f64> = (0..draws)
        .map(|_| {
            let y: Vec<f64> = mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect();
            let fit = fit_matrix(&design, &y, spec.clone()).unwrap();
            let pred = fit.coefficients[0] + fit.coefficients[1] * point[0];
            let y0 = truth + rng.sample::<f64, _>(StandardNormal);
            (pred - y0).powi(2)
        })
        .collect();
    let (mc, se) = common::mean_se(&errors);
    assert!((mc - analytic).abs() < 4.0 * se, "analytic {analytic}, mc {mc} ± {se}");
}

#[test]
fn mixture_curve_agrees_with_its_simulation() {
    let cfg = Figure1Config {
        n: 300,
        grid: vec![0.0, 3.0, 6.0],
        draws: 4000,
        seed: 8,
        ..Figure1Config::default()
    };
    let points = figure1_experiment(&cfg).unwrap();
    assert_eq!(points.len(), 3);
    for pt in &points {
        let mix = (1.0 - cfg.p_missing) * pt.epe_l + cfg.p_missing * pt.epe_s;
        assert!((pt.epe_pmks - mix).abs() < 1e-12);
        assert!(pt.epe_l >= 1.0 && pt.epe_s > pt.epe_l);
        assert!((pt.mc_estimate - pt.epe_pmks).abs() < 4.0 * pt.mc_se, "{pt:?}");
    }
    assert_eq!(figure1_experiment(&cfg).unwrap(), points);
}

fn small_study(seed: u64) -> SimConfig {
    let mut mar = MechanismSpec::new(MechanismKind::Mar, 0.5);
    mar.nu2 = 1.0;
    let mut methods: Vec<MethodSpec> = [Method::Pmks, Method::Ccs, Method::Mi, Method::Mimi]
        .into_iter()
        .map(MethodSpec::new)
        .collect();
    for m in &mut methods {
        m.imputation.m = 3;
        m.imputation.cycles = 3;
    }
    SimConfig {
        seed: Some(seed),
        reps: 4,
        n_test: Some(200),
        scenarios: vec![Scenario {
            name: "mar".into(),
            generator: GenConfig::bivariate(200, [3.0, 3.0], 0.5, [1.0, 3.0, 1.0]),
            mechanisms: vec![mar],
        }],
        methods,
        engines: vec![EngineSpec {
            label: None,
            engine: ImputationMethod::CondMean,
            options: Default::default(),
        }],
        figure1: None,
    }
}

#[test]
fn simulation_output_depends_only_on_the_seed() {
    let cfg = small_study(42);
    let a = run_simulation(&cfg).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = single.install(|| run_simulation(&cfg).unwrap());
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.imputation_csv(), b.imputation_csv());
    let c = run_simulation(&small_study(43)).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn pattern_rows_sum_to_the_total() {
    let report = run_simulation(&small_study(7)).unwrap();
    for method in ["pmks", "ccs", "mi", "mimi"] {
        let total = report.row("mar", method, "total").unwrap().mean;
        let parts: f64 = report
            .rows
            .iter()
            .filter(|r| r.method == method && r.scope.starts_with("pattern-"))
            .map(|r| r.mean)
            .sum();
        assert!((total - parts).abs() < 1e-9 * total, "{method}");
        assert!(total > 0.5, "{method}: {total}");
    }
    assert!(report.imputation("mar", "cond-mean").is_some());
}

#[test]
fn noise_free_outcomes_are_predicted_exactly_by_pattern_fits() {
    let mut cfg = small_study(9);
    cfg.scenarios[0].generator.noise_sd = 0.0;
    // exact linearity holds within the complete pattern only
    cfg.scenarios[0].mechanisms.clear();
    cfg.methods.truncate(2);
    let report = run_simulation(&cfg).unwrap();
    for method in ["pmks", "ccs"] {
        assert!(report.row("mar", method, "total").unwrap().mean < 1e-12);
    }
}

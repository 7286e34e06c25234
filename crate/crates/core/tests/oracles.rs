//! Closed-form values recomputed by hand and checked against the library.

use approx::assert_abs_diff_eq;
use ipsw_core::balance::{smd_binary, BalanceReport};
use ipsw_core::covariate::{Covariate, N_BINARY};
use ipsw_core::irls::{fit_logistic, DesignMatrix, IrlsOptions};
use ipsw_core::montecarlo::{run_replication, Estimator};
use ipsw_core::outcome::{
    builtin_scenario, expected_sate, generate_outcomes, standardize_age, treatment_effects, AgeAnchor,
};
use ipsw_core::population::{builtin_spec, builtin_specs, sample_population, sample_population_n, Cohort};
use ipsw_core::selection::{fit_selection_model, WeightingSpec};
use ipsw_core::{estimate, parse_config, StudyConfig};
use rand::Rng;

fn pooled_smd(a: f64, b: f64, va: f64, vb: f64) -> f64 {
    (a - b) / ((va + vb) / 2.0).sqrt()
}

fn prevalence(name: &str, c: Covariate) -> f64 {
    builtin_spec(name).unwrap().prevalence_of(c).unwrap().value().unwrap()
}

#[test]
fn trial_sample_mean_age_is_within_clt_bounds() {
    let trial = builtin_spec("trial").unwrap();
    for seed in [1, 2, 3, 99, 12345] {
        let cohort = sample_population(&trial, seed).unwrap();
        assert_eq!(cohort.len(), 5000);
        let mean = cohort.age().iter().sum::<f64>() / 5000.0;
        assert!((mean - 61.8).abs() < 5.0 * 12.7 / 5000f64.sqrt(), "{mean}");
    }
}

#[test]
fn age_standardization_arithmetic() {
    let trial = builtin_spec("trial").unwrap();
    assert_abs_diff_eq!(standardize_age(41.4, &trial), (41.4 - 61.8) / 12.7, epsilon = 1e-12);
    assert_abs_diff_eq!(standardize_age(41.4, &trial), -1.606, epsilon = 5e-4);
}

#[test]
fn hypertensive_individual_at_anchor_age() {
    let trial = builtin_spec("trial").unwrap();
    let mut binary: [Option<Vec<u8>>; N_BINARY] = Default::default();
    for c in Covariate::BINARY {
        binary[c.binary_index().unwrap()] = Some(vec![u8::from(c == Covariate::Hypertension)]);
    }
    let one = Cohort::from_columns("one", vec![61.8], binary).unwrap();
    let s = builtin_scenario("one_modifier").unwrap();
    let te = treatment_effects(&one, &s, AgeAnchor::from_spec(&trial), 1.0).unwrap();
    assert_abs_diff_eq!(te[0], 6.74, epsilon = 1e-12);
}

#[test]
fn expected_sample_effects_by_plug_in() {
    let trial = builtin_spec("trial").unwrap();
    let one = expected_sate(&trial, &builtin_scenario("one_modifier").unwrap(), &trial).unwrap();
    assert_abs_diff_eq!(one, 5.4 + 1.34 * 0.784, epsilon = 1e-12);
    assert_abs_diff_eq!(one, 6.451, epsilon = 5e-4);

    let four = expected_sate(&trial, &builtin_scenario("four_modifiers").unwrap(), &trial).unwrap();
    assert_abs_diff_eq!(four, 5.4 + 1.34 * (0.504 + 0.784 + 0.092), epsilon = 1e-12);
    assert_abs_diff_eq!(four, 7.249, epsilon = 5e-4);

    let none = expected_sate(&trial, &builtin_scenario("no_modifiers").unwrap(), &trial).unwrap();
    assert_eq!(none, 5.4);
}

#[test]
fn no_modifier_sample_effect_is_exact() {
    let trial = builtin_spec("trial").unwrap();
    let cohort = sample_population(&trial, 8).unwrap();
    let o = generate_outcomes(
        &cohort,
        &builtin_scenario("no_modifiers").unwrap(),
        AgeAnchor::from_spec(&trial),
        3,
    )
    .unwrap();
    assert_eq!(estimate::sate(&o).unwrap(), 5.4);
}

#[test]
fn parameter_smds_match_hand_arithmetic() {
    let reference = builtin_spec("pcornet_disease").unwrap();
    let report = BalanceReport::from_specs(&reference, &builtin_specs()).unwrap();
    let age = |pop: &str| report.smd(pop, Covariate::Age).unwrap().unwrap();

    let trial_age = pooled_smd(61.8, 63.0, 12.7f64.powi(2), 13.7f64.powi(2));
    assert_abs_diff_eq!(age("trial"), trial_age, epsilon = 1e-12);
    assert_abs_diff_eq!(trial_age, -0.0908, epsilon = 5e-5);
    // one realization printed -0.096
    assert_abs_diff_eq!(age("trial"), -0.096, epsilon = 0.02);

    let census_age = pooled_smd(39.1, 63.0, 23.5f64.powi(2), 13.7f64.powi(2));
    assert_abs_diff_eq!(age("us_census"), census_age, epsilon = 1e-12);
    assert_abs_diff_eq!(census_age, -1.243, epsilon = 5e-4);
    assert_abs_diff_eq!(age("us_census"), -1.246, epsilon = 0.02);

    let bin = |a: f64, b: f64| pooled_smd(a, b, a * (1.0 - a), b * (1.0 - b));
    let htn = report.smd("trial", Covariate::Hypertension).unwrap().unwrap();
    assert_abs_diff_eq!(htn, bin(0.784, 0.770), epsilon = 1e-12);
    assert_abs_diff_eq!(htn, 0.0337, epsilon = 1e-4);
    assert_abs_diff_eq!(htn, 0.034, epsilon = 5e-4);

    let cad = report.smd("registry", Covariate::Cad).unwrap().unwrap();
    assert_abs_diff_eq!(cad, bin(0.579, 0.249), epsilon = 1e-12);
    assert_abs_diff_eq!(cad, 0.713, epsilon = 0.02);
    assert_abs_diff_eq!(smd_binary(0.579, 0.249).unwrap(), cad, epsilon = 0.0);
}

#[test]
fn published_component_cells_sum_to_their_aggregates() {
    let trial_column = [-0.096, -0.034, -0.017, -0.163, -0.210, 0.034, -0.135, -0.044, -0.379];
    let mut cells = [None; 9];
    for (i, v) in trial_column.iter().enumerate() {
        cells[i] = Some(*v);
    }
    let report = BalanceReport::from_cells("pcornet_disease", vec![("trial".into(), cells)]);
    let all = report.aggregate(&Covariate::ALL)[0].value;
    assert_abs_diff_eq!(all, -1.044, epsilon = 1e-9);
    let four = builtin_scenario("four_modifiers").unwrap().modifiers;
    assert_abs_diff_eq!(report.aggregate(&four)[0].value, -0.475, epsilon = 1e-9);
}

#[test]
fn report_shape_matches_the_comparison_table() {
    let reference = builtin_spec("pcornet_disease").unwrap();
    let report = BalanceReport::from_specs(&reference, &builtin_specs()).unwrap();
    assert_eq!(
        report.populations,
        ["trial", "registry", "pcornet_overall", "us_census"]
    );
    let census = report.row("us_census").unwrap();
    for c in Covariate::ALL {
        assert_eq!(census[c.index()].is_none(), c.is_clinical(), "{c}");
    }
    for name in ["trial", "registry", "pcornet_overall"] {
        assert!(report.row(name).unwrap().iter().all(Option::is_some));
    }
}

#[test]
fn same_distribution_gives_null_selection_slopes() {
    let trial = builtin_spec("trial").unwrap();
    let a = sample_population_n(&trial, 5000, 31).unwrap();
    let b = sample_population_n(&trial, 5000, 32).unwrap();
    let fit = fit_selection_model(&a, &b, &WeightingSpec::dem_clin()).unwrap();
    for (c, v) in fit.covariates.iter().zip(&fit.coefficients) {
        // age is per year, so its bound is on the per-SD scale
        let scaled = if *c == Covariate::Age { v * trial.age_sd } else { *v };
        assert!(scaled.abs() < 0.15, "{c}: {scaled}");
    }
}

/// Gradient ascent on the mean log-likelihood; slow but shares no code with
/// the Newton solver.
fn gradient_ascent(x: &[f64], y: &[u8]) -> (f64, f64) {
    let n = y.len() as f64;
    let (mut b0, mut b1) = (0.0, 0.0);
    for _ in 0..200_000 {
        let (mut g0, mut g1) = (0.0, 0.0);
        for (xi, yi) in x.iter().zip(y) {
            let r = f64::from(*yi) - 1.0 / (1.0 + (-(b0 + b1 * xi)).exp());
            g0 += r;
            g1 += r * xi;
        }
        if (g0 / n).abs() < 1e-13 && (g1 / n).abs() < 1e-13 {
            break;
        }
        b0 += 4.0 * g0 / n;
        b1 += 4.0 * g1 / n;
    }
    (b0, b1)
}

#[test]
fn synthetic_coefficients_are_recovered() {
    let (t0, t1) = (-2.0, 0.8);
    let n = 30_000;
    let mut rng = ipsw_core::seed::rng(2024);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let v: f64 = rng.random::<f64>() * 4.0 - 2.0;
        y.push(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-(t0 + t1 * v)).exp())));
        x.push(v);
    }
    let design = DesignMatrix::from_rows(1, &x.iter().map(|v| vec![*v]).collect::<Vec<_>>());
    let fit = fit_logistic(&design, &y, &IrlsOptions::default()).unwrap();

    // inverse of the 2x2 Fisher information
    let (mut i00, mut i01, mut i11) = (0.0, 0.0, 0.0);
    for v in &x {
        let p = 1.0 / (1.0 + (-(fit.intercept + fit.coefficients[0] * v)).exp());
        let w = p * (1.0 - p);
        i00 += w;
        i01 += w * v;
        i11 += w * v * v;
    }
    let det = i00 * i11 - i01 * i01;
    let (se0, se1) = ((i11 / det).sqrt(), (i00 / det).sqrt());
    assert!((fit.intercept - t0).abs() < 3.0 * se0, "{} vs {t0}", fit.intercept);
    assert!(
        (fit.coefficients[0] - t1).abs() < 3.0 * se1,
        "{} vs {t1}",
        fit.coefficients[0]
    );

    let (g0, g1) = gradient_ascent(&x, &y);
    assert_abs_diff_eq!(fit.intercept, g0, epsilon = 1e-6);
    assert_abs_diff_eq!(fit.coefficients[0], g1, epsilon = 1e-6);
}

#[test]
fn reference_weights_average_about_one() {
    let config = StudyConfig::default();
    let plan = config.plan().unwrap();
    let cohorts = ipsw_core::montecarlo::sample_study_cohorts(&plan, 0).unwrap();
    let fit = fit_selection_model(
        &cohorts[plan.analytic],
        &cohorts[plan.reference],
        &WeightingSpec::dem_clin(),
    )
    .unwrap();
    let mean = fit.weights.iter().sum::<f64>() / fit.weights.len() as f64;
    assert!((mean - 1.0).abs() < 0.05, "{mean}");
}

#[test]
fn doubling_the_scale_doubles_the_bias() {
    let config = StudyConfig::default();
    let s = builtin_scenario("all_modifiers").unwrap();
    let e = Estimator::ipsw("dem_clin", "registry");
    let one = run_replication(&config, &s, 1.0, 0).unwrap();
    let two = run_replication(&config, &s, 2.0, 0).unwrap();
    let (b1, b2) = (one.record(&e).unwrap().bias, two.record(&e).unwrap().bias);
    assert!(b1 > 0.0);
    assert_abs_diff_eq!(b2 / b1, 2.0, epsilon = 1e-9);
}

#[test]
fn empty_configuration_is_the_default_study() {
    let config = parse_config("").unwrap();
    assert_eq!(config, StudyConfig::default());
    assert_eq!(config.populations.len(), 5);
    assert_eq!(config.scenarios.len(), 4);
    assert_eq!(config.weightings.len(), 2);
    assert_eq!(config.replications, 1000);
    assert_eq!(config.effect_scales, [1.0]);
    assert_eq!(config.plan().unwrap().pairings.len(), 7);
}

#[test]
fn census_prevalences_follow_the_table() {
    assert_eq!(prevalence("us_census", Covariate::Hispanic), 0.187);
    assert!(!builtin_spec("us_census").unwrap().is_measured(Covariate::Pad));
    assert_eq!(prevalence("registry", Covariate::Cad), 0.579);
}

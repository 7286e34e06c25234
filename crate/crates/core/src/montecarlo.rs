//! Replications, Monte Carlo aggregation and the effect-scale sweep.
//!
//! A replication draws every population afresh, fits each feasible selection
//! model once, and then evaluates every (scenario, effect scale) cell on
//! those same draws. Seeds depend only on the master seed, the replication
//! index and the stream label, so the cells of one replication are paired
//! (common random numbers) and results do not depend on scheduling.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::balance::{smd_row, BalanceError, CovariateMoments};
use crate::covariate::Covariate;
use crate::estimate::{pate_ipsw, sate, EstimationError};
use crate::outcome::{generate_outcomes_scaled, OutcomeError, ScenarioSpec};
use crate::population::{sample_population, Cohort, SpecError};
use crate::seed;
use crate::selection::{fit_selection_model_with, SelectionError, SelectionOptions};
use crate::stats::{mean, sample_sd};
use crate::study::{ConfigError, SkipRecord, StudyConfig, StudyPlan};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("replication {rep}: {source}")]
    Sampling { rep: usize, source: SpecError },
    #[error("replication {rep}, scenario `{scenario}`: {source}")]
    Outcome {
        rep: usize,
        scenario: String,
        source: OutcomeError,
    },
    #[error("replication {rep}, {weighting} -> {target}: {source}")]
    Selection {
        rep: usize,
        weighting: String,
        target: String,
        source: SelectionError,
    },
    #[error("replication {rep}: {source}")]
    Estimation { rep: usize, source: EstimationError },
    #[error("replication {rep}: balance diagnostics failed: {source}")]
    Balance { rep: usize, source: BalanceError },
    #[error("scenario `{0}` is not part of the configuration")]
    UnknownScenario(String),
}

/// What produced an estimate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    /// Unweighted mean effect in the analytic sample.
    Sate,
    Ipsw {
        weighting: String,
        target: String,
    },
}

impl Estimator {
    pub const SATE_WEIGHTING: &'static str = "none";
    pub const SATE_TARGET: &'static str = "SATE";

    pub fn ipsw(weighting: &str, target: &str) -> Self {
        Estimator::Ipsw {
            weighting: weighting.to_string(),
            target: target.to_string(),
        }
    }

    pub fn weighting_label(&self) -> &str {
        match self {
            Estimator::Sate => Self::SATE_WEIGHTING,
            Estimator::Ipsw { weighting, .. } => weighting,
        }
    }

    pub fn target_label(&self) -> &str {
        match self {
            Estimator::Sate => Self::SATE_TARGET,
            Estimator::Ipsw { target, .. } => target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub estimator: Estimator,
    pub estimate: f64,
    /// `estimate - reference_pate` of the same replication.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub rep_index: usize,
    pub scenario: String,
    pub effect_scale: f64,
    pub reference_pate: f64,
    /// SATE first, then one record per pairing.
    pub records: Vec<EstimateRecord>,
}

impl ReplicationResult {
    pub fn record(&self, estimator: &Estimator) -> Option<&EstimateRecord> {
        self.records.iter().find(|r| &r.estimator == estimator)
    }
}

/// Per-fit diagnostics for one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub rep_index: usize,
    pub weighting: String,
    pub target: String,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    pub intercept: f64,
    pub coefficients: Vec<(Covariate, f64)>,
    pub ess: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    /// Largest |SMD| between the weighted trial and the realized target cohort
    /// over the weighting covariates.
    pub max_abs_weighted_smd: f64,
}

/// Everything one replication produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationBundle {
    pub rep_index: usize,
    /// Scenario-major, then effect scale, in configuration order.
    pub results: Vec<ReplicationResult>,
    pub fits: Vec<FitDiagnostics>,
}

/// Seed for replication `rep_index`.
pub fn replication_seed(master_seed: u64, rep_index: usize) -> u64 {
    seed::derive_indexed(master_seed, "replication", rep_index as u64)
}

fn population_seed(rep_seed: u64, name: &str) -> u64 {
    seed::derive(rep_seed, &format!("population:{name}"))
}

fn outcome_seed(rep_seed: u64) -> u64 {
    seed::derive(rep_seed, "outcomes")
}

/// Every configured population as drawn in replication `rep_index`, in
/// configuration order. These are the same cohorts the replication uses.
pub fn sample_study_cohorts(plan: &StudyPlan, rep_index: usize) -> Result<Vec<Cohort>, SimulationError> {
    let rep_seed = replication_seed(plan.config.master_seed, rep_index);
    plan.config
        .populations
        .iter()
        .map(|spec| {
            sample_population(spec, population_seed(rep_seed, &spec.name))
                .map_err(|source| SimulationError::Sampling { rep: rep_index, source })
        })
        .collect()
}

/// Runs one replication of `plan` over the given (scenario, scale) cells.
///
/// Scales here may be zero, which the configuration itself does not allow.
pub fn run_replication_cells(
    plan: &StudyPlan,
    cells: &[(&ScenarioSpec, f64)],
    rep_index: usize,
) -> Result<ReplicationBundle, SimulationError> {
    let config = &plan.config;
    let rep_seed = replication_seed(config.master_seed, rep_index);
    let sample = |idx: usize| -> Result<Cohort, SimulationError> {
        let spec = &config.populations[idx];
        sample_population(spec, population_seed(rep_seed, &spec.name))
            .map_err(|source| SimulationError::Sampling { rep: rep_index, source })
    };

    let trial = sample(plan.analytic)?;
    let balance = |source| SimulationError::Balance { rep: rep_index, source };
    let mut targets: Vec<(usize, Cohort, CovariateMoments)> = Vec::new();
    for p in &plan.pairings {
        if !targets.iter().any(|(i, ..)| *i == p.target) {
            let cohort = sample(p.target)?;
            let moments = CovariateMoments::from_cohort(&cohort).map_err(balance)?;
            targets.push((p.target, cohort, moments));
        }
    }

    let opts = SelectionOptions {
        max_weight: config.max_weight,
        ..SelectionOptions::default()
    };
    let mut weights = Vec::with_capacity(plan.pairings.len());
    let mut fits = Vec::with_capacity(plan.pairings.len());
    for p in &plan.pairings {
        let (wname, tname) = plan.pairing_names(p);
        let (_, target, realized) = targets.iter().find(|(i, ..)| *i == p.target).unwrap();
        let spec = &config.weightings[p.weighting];
        let fit =
            fit_selection_model_with(&trial, target, spec, &opts).map_err(|source| SimulationError::Selection {
                rep: rep_index,
                weighting: wname.to_string(),
                target: tname.to_string(),
                source,
            })?;
        let weighted = CovariateMoments::weighted(&trial, &fit.weights).map_err(balance)?;
        let smd = smd_row(&weighted, realized).map_err(balance)?;
        let max_abs_weighted_smd = spec
            .covariates
            .iter()
            .filter_map(|c| smd[c.index()])
            .fold(0.0, |m: f64, v| m.max(v.abs()));
        fits.push(FitDiagnostics {
            rep_index,
            weighting: wname.to_string(),
            target: tname.to_string(),
            converged: fit.converged,
            iterations: fit.iterations,
            max_abs_score: fit.max_abs_score,
            intercept: fit.intercept,
            coefficients: fit
                .covariates
                .iter()
                .copied()
                .zip(fit.coefficients.iter().copied())
                .collect(),
            ess: fit.effective_sample_size(),
            min_weight: fit.weights.iter().copied().fold(f64::INFINITY, f64::min),
            max_weight: fit.weights.iter().copied().fold(0.0, f64::max),
            max_abs_weighted_smd,
        });
        weights.push(fit.weights);
    }
    drop(targets);

    let oseed = outcome_seed(rep_seed);
    let mut results = Vec::with_capacity(cells.len());
    for (scenario, k) in cells {
        let outcomes = generate_outcomes_scaled(&trial, scenario, plan.anchor, *k, oseed).map_err(|source| {
            SimulationError::Outcome {
                rep: rep_index,
                scenario: scenario.name.clone(),
                source,
            }
        })?;
        let estimation = |source| SimulationError::Estimation { rep: rep_index, source };
        let sate_value = sate(&outcomes).map_err(estimation)?;
        let pates = weights
            .iter()
            .map(|w| pate_ipsw(w, &outcomes))
            .collect::<Result<Vec<_>, _>>()
            .map_err(estimation)?;
        let reference_pate = pates[plan.reference_pairing];
        let mut records = Vec::with_capacity(pates.len() + 1);
        records.push(EstimateRecord {
            estimator: Estimator::Sate,
            estimate: sate_value,
            bias: sate_value - reference_pate,
        });
        for (p, est) in plan.pairings.iter().zip(&pates) {
            let (w, t) = plan.pairing_names(p);
            records.push(EstimateRecord {
                estimator: Estimator::ipsw(w, t),
                estimate: *est,
                bias: est - reference_pate,
            });
        }
        results.push(ReplicationResult {
            rep_index,
            scenario: scenario.name.clone(),
            effect_scale: *k,
            reference_pate,
            records,
        });
    }
    Ok(ReplicationBundle {
        rep_index,
        results,
        fits,
    })
}

/// One replication of every configured (scenario, scale) cell. The
/// multiplier used for a cell is the scenario's own `effect_scale` times the
/// study scale.
pub fn run_replication_grid(plan: &StudyPlan, rep_index: usize) -> Result<ReplicationBundle, SimulationError> {
    let cells: Vec<(&ScenarioSpec, f64)> = plan
        .config
        .scenarios
        .iter()
        .flat_map(|s| plan.config.effect_scales.iter().map(move |k| (s, s.effect_scale * k)))
        .collect();
    run_replication_cells(plan, &cells, rep_index)
}

/// One replication of a single (scenario, scale) cell.
pub fn run_replication(
    config: &StudyConfig,
    scenario: &ScenarioSpec,
    effect_scale: f64,
    rep_index: usize,
) -> Result<ReplicationResult, SimulationError> {
    let plan = config.plan()?;
    let bundle = run_replication_cells(&plan, &[(scenario, effect_scale)], rep_index)?;
    Ok(bundle.results.into_iter().next().unwrap())
}

#[derive(Clone)]
pub struct RunOptions {
    pub workers: usize,
    /// Keep per-fit diagnostics in the output.
    pub diagnostics: bool,
    /// Called with the number of finished replications. Carries no results.
    pub progress: Option<Arc<dyn Fn(usize) + Send + Sync>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            diagnostics: false,
            progress: None,
        }
    }
}

impl std::fmt::Debug for RunOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunOptions")
            .field("workers", &self.workers)
            .field("diagnostics", &self.diagnostics)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub effect_scale: f64,
    pub estimator: Estimator,
    pub pate_mean: f64,
    pub pate_sd: f64,
    pub bias_mean: f64,
    pub bias_sd: f64,
    pub replications: usize,
}

impl SummaryRow {
    /// Monte Carlo standard error of the mean bias.
    pub fn bias_se(&self) -> f64 {
        self.bias_sd / (self.replications as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, scenario: &str, effect_scale: f64, estimator: &Estimator) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.effect_scale == effect_scale && &r.estimator == estimator)
    }

    /// Rows grouped by effect scale, in first-appearance order.
    pub fn by_scale(&self) -> Vec<(f64, Vec<&SummaryRow>)> {
        let mut out: Vec<(f64, Vec<&SummaryRow>)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(k, _)| *k == r.effect_scale) {
                Some((_, rows)) => rows.push(r),
                None => out.push((r.effect_scale, vec![r])),
            }
        }
        out
    }
}

/// One bias draw for plotting bias distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasDraw {
    pub scenario: String,
    pub effect_scale: f64,
    pub estimator: Estimator,
    pub rep: usize,
    pub estimate: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitSummary {
    pub fits: usize,
    pub non_converged: usize,
    pub max_abs_score: f64,
    pub min_ess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOutput {
    pub summary: SummaryTable,
    /// Ordered by cell, estimator, then replication.
    pub draws: Vec<BiasDraw>,
    pub skips: Vec<SkipRecord>,
    pub warnings: Vec<String>,
    pub fit_summary: FitSummary,
    /// Empty unless requested in [`RunOptions`].
    pub diagnostics: Vec<FitDiagnostics>,
}

/// Runs every replication and aggregates in replication order.
pub fn run_monte_carlo(config: &StudyConfig, opts: &RunOptions) -> Result<MonteCarloOutput, SimulationError> {
    let plan = config.plan()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .expect("thread pool");
    let done = std::sync::atomic::AtomicUsize::new(0);
    let bundles: Vec<ReplicationBundle> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let b = run_replication_grid(&plan, rep);
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                if let Some(progress) = &opts.progress {
                    progress(n);
                }
                b
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(aggregate(&plan, bundles, opts.diagnostics))
}

fn aggregate(plan: &StudyPlan, bundles: Vec<ReplicationBundle>, keep_diagnostics: bool) -> MonteCarloOutput {
    let reps = bundles.len();
    let mut warnings = Vec::new();
    if reps == 1 {
        warnings.push("only one replication: standard deviations are reported as 0".to_string());
    }

    let mut fit_summary = FitSummary {
        min_ess: f64::INFINITY,
        ..FitSummary::default()
    };
    let mut diagnostics = Vec::new();
    for b in &bundles {
        for f in &b.fits {
            fit_summary.fits += 1;
            fit_summary.non_converged += usize::from(!f.converged);
            fit_summary.max_abs_score = fit_summary.max_abs_score.max(f.max_abs_score);
            fit_summary.min_ess = fit_summary.min_ess.min(f.ess);
        }
        if keep_diagnostics {
            diagnostics.extend(b.fits.iter().cloned());
        }
    }
    if fit_summary.non_converged > 0 {
        warnings.push(format!(
            "{} of {} selection fits did not converge",
            fit_summary.non_converged, fit_summary.fits
        ));
    }

    let mut summary = SummaryTable::default();
    let mut draws = Vec::new();
    let n_cells = bundles.first().map_or(0, |b| b.results.len());
    for cell in 0..n_cells {
        let first = &bundles[0].results[cell];
        for (e, record) in first.records.iter().enumerate() {
            let estimates: Vec<f64> = bundles.iter().map(|b| b.results[cell].records[e].estimate).collect();
            let biases: Vec<f64> = bundles.iter().map(|b| b.results[cell].records[e].bias).collect();
            summary.rows.push(SummaryRow {
                scenario: first.scenario.clone(),
                effect_scale: first.effect_scale,
                estimator: record.estimator.clone(),
                pate_mean: mean(&estimates).unwrap_or(f64::NAN),
                pate_sd: sample_sd(&estimates),
                bias_mean: mean(&biases).unwrap_or(f64::NAN),
                bias_sd: sample_sd(&biases),
                replications: reps,
            });
            for (b, (estimate, bias)) in bundles.iter().zip(estimates.into_iter().zip(biases)) {
                draws.push(BiasDraw {
                    scenario: first.scenario.clone(),
                    effect_scale: first.effect_scale,
                    estimator: record.estimator.clone(),
                    rep: b.rep_index,
                    estimate,
                    bias,
                });
            }
        }
    }
    MonteCarloOutput {
        summary,
        draws,
        skips: plan.skips.clone(),
        warnings,
        fit_summary,
        diagnostics,
    }
}

/// Runs the full Monte Carlo once per effect scale in `scales`.
pub fn effect_scale_sweep(
    config: &StudyConfig,
    scales: &[f64],
    opts: &RunOptions,
) -> Result<MonteCarloOutput, SimulationError> {
    let config = StudyConfig {
        effect_scales: scales.to_vec(),
        ..config.clone()
    };
    run_monte_carlo(&config, opts)
}

/// Restricts a configuration to the named scenarios.
pub fn restrict_scenarios(config: &StudyConfig, names: &[String]) -> Result<StudyConfig, SimulationError> {
    let mut scenarios = Vec::with_capacity(names.len());
    for n in names {
        let s = config
            .scenarios
            .iter()
            .find(|s| &s.name == n)
            .ok_or_else(|| SimulationError::UnknownScenario(n.clone()))?;
        scenarios.push(s.clone());
    }
    Ok(StudyConfig {
        scenarios,
        ..config.clone()
    })
}

//! Trial-membership model and inverse probability of sampling weights.
//!
//! Trial rows (S = 1) are stacked on top of target rows (S = 0) and a
//! main-effects logistic model of S is fit on the weighting covariates.
//! Each trial participant gets `w_i = P(S = 1) / P(S = 1 | X_i)`, where the
//! marginal probability is the realized stacked share of trial rows.

use thiserror::Error;

use crate::covariate::Covariate;
use crate::irls::{fit_logistic, DesignMatrix, IrlsError, IrlsOptions};
use crate::population::Cohort;
use crate::stats::CompensatedSum;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightingSpec {
    pub name: String,
    /// Canonical order, no duplicates.
    pub covariates: Vec<Covariate>,
}

impl WeightingSpec {
    pub fn new(name: impl Into<String>, covariates: &[Covariate]) -> Self {
        let mut covariates = covariates.to_vec();
        covariates.sort();
        covariates.dedup();
        WeightingSpec {
            name: name.into(),
            covariates,
        }
    }

    /// Demographic and clinical covariates.
    pub fn dem_clin() -> Self {
        Self::new("dem_clin", &Covariate::ALL)
    }

    /// Age, sex, race and ethnicity only.
    pub fn dem_only() -> Self {
        Self::new("dem_only", &Covariate::DEMOGRAPHIC)
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.name.trim().is_empty() || self.covariates.is_empty() {
            return Err(SelectionError::InvalidSpec(format!(
                "weighting `{}` needs a name and at least one covariate",
                self.name
            )));
        }
        Ok(())
    }
}

pub fn builtin_weightings() -> Vec<WeightingSpec> {
    vec![WeightingSpec::dem_clin(), WeightingSpec::dem_only()]
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("{0}")]
    InvalidSpec(String),
    #[error("covariate `{covariate}` is unmeasured in `{population}`")]
    Unmeasured { population: String, covariate: Covariate },
    #[error("cohort `{0}` is empty")]
    EmptyCohort(String),
    #[error("covariate `{0}` is constant in the stacked data; its coefficient is not identified")]
    NonIdentified(Covariate),
    #[error("selection probability at row {row} is {value}; weights need probabilities in (0, 1]")]
    InvalidProbability { row: usize, value: f64 },
    #[error("marginal trial probability {0} is outside (0, 1)")]
    InvalidMarginal(f64),
    #[error("weight cap must be positive, got {0}")]
    InvalidCap(f64),
    #[error("no weights given")]
    NoWeights,
    #[error("weight at row {row} is not positive ({value})")]
    NonPositiveWeight { row: usize, value: f64 },
    #[error("selection model solver failed: {0}")]
    Solver(IrlsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionOptions {
    pub solver: IrlsOptions,
    /// Optional upper bound on individual weights. Off by default.
    pub max_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionFit {
    pub weighting: String,
    pub target: String,
    pub intercept: f64,
    /// Log-odds coefficients, original scale, aligned with `covariates`.
    pub coefficients: Vec<f64>,
    pub covariates: Vec<Covariate>,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    pub log_likelihood: Vec<f64>,
    /// `P(S = 1 | X_i)` for each trial row.
    pub probabilities: Vec<f64>,
    pub weights: Vec<f64>,
    pub marginal_p: f64,
}

impl SelectionFit {
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights).expect("fit weights are nonempty and positive")
    }

    pub fn coefficient(&self, c: Covariate) -> Option<f64> {
        self.covariates
            .iter()
            .position(|x| *x == c)
            .map(|i| self.coefficients[i])
    }
}

/// Stacks trial rows then target rows on `covariates`.
pub fn stacked_design(
    trial: &Cohort,
    target: &Cohort,
    covariates: &[Covariate],
) -> Result<DesignMatrix, SelectionError> {
    for cohort in [trial, target] {
        if cohort.is_empty() {
            return Err(SelectionError::EmptyCohort(cohort.spec_name().to_string()));
        }
        for c in covariates {
            if !cohort.is_measured(*c) {
                return Err(SelectionError::Unmeasured {
                    population: cohort.spec_name().to_string(),
                    covariate: *c,
                });
            }
        }
    }
    let p = covariates.len();
    let mut design = DesignMatrix::with_capacity(p, trial.len() + target.len());
    let mut row = vec![0.0; p];
    for cohort in [trial, target] {
        let cols: Vec<_> = covariates.iter().map(|c| cohort.column(*c).unwrap()).collect();
        for i in 0..cohort.len() {
            for (slot, col) in row.iter_mut().zip(&cols) {
                *slot = col.get(i);
            }
            design.push_row(&row);
        }
    }
    Ok(design)
}

pub fn fit_selection_model(
    trial: &Cohort,
    target: &Cohort,
    spec: &WeightingSpec,
) -> Result<SelectionFit, SelectionError> {
    fit_selection_model_with(trial, target, spec, &SelectionOptions::default())
}

/// Fits the selection model and derives weights for the trial rows.
///
/// Non-convergence is not an error: the fit comes back with
/// `converged == false` and its diagnostics.
pub fn fit_selection_model_with(
    trial: &Cohort,
    target: &Cohort,
    spec: &WeightingSpec,
    opts: &SelectionOptions,
) -> Result<SelectionFit, SelectionError> {
    spec.validate()?;
    let design = stacked_design(trial, target, &spec.covariates)?;
    let n1 = trial.len();
    let n = design.n_rows();
    let mut labels = vec![0u8; n];
    labels[..n1].fill(1);

    let fit = fit_logistic(&design, &labels, &opts.solver).map_err(|e| match e {
        IrlsError::ConstantColumn(j) => SelectionError::NonIdentified(spec.covariates[j]),
        other => SelectionError::Solver(other),
    })?;

    let probabilities: Vec<f64> = (0..n1).map(|i| fit.probability(design.row(i))).collect();
    let marginal_p = n1 as f64 / n as f64;
    let weights = ipsw_weights(&probabilities, marginal_p, opts.max_weight)?;
    Ok(SelectionFit {
        weighting: spec.name.clone(),
        target: target.spec_name().to_string(),
        intercept: fit.intercept,
        coefficients: fit.coefficients,
        covariates: spec.covariates.clone(),
        converged: fit.converged,
        iterations: fit.iterations,
        max_abs_score: fit.max_abs_score,
        log_likelihood: fit.log_likelihood,
        probabilities,
        weights,
        marginal_p,
    })
}

/// `w_i = marginal_p / p_i`, optionally capped at `max_weight`.
pub fn ipsw_weights(
    probabilities: &[f64],
    marginal_p: f64,
    max_weight: Option<f64>,
) -> Result<Vec<f64>, SelectionError> {
    if !(marginal_p > 0.0 && marginal_p < 1.0) {
        return Err(SelectionError::InvalidMarginal(marginal_p));
    }
    if let Some(cap) = max_weight {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(SelectionError::InvalidCap(cap));
        }
    }
    probabilities
        .iter()
        .enumerate()
        .map(|(row, &p)| {
            if !(p > 0.0 && p <= 1.0) {
                return Err(SelectionError::InvalidProbability { row, value: p });
            }
            let w = marginal_p / p;
            Ok(max_weight.map_or(w, |cap| w.min(cap)))
        })
        .collect()
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64, SelectionError> {
    if weights.is_empty() {
        return Err(SelectionError::NoWeights);
    }
    let mut s = CompensatedSum::new();
    let mut s2 = CompensatedSum::new();
    for (row, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w > 0.0) {
            return Err(SelectionError::NonPositiveWeight { row, value: w });
        }
        s.add(w);
        s2.add(w * w);
    }
    Ok(s.value() * s.value() / s2.value())
}

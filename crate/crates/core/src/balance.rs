//! Standardized mean differences against a reference population.
//!
//! Sign convention: comparator minus reference. Continuous covariates use
//! the pooled-SD form, binary covariates the pooled two-proportion form.
//! The same formulas serve parameter-level tables and realized or weighted
//! sample diagnostics.

use thiserror::Error;

use crate::covariate::{Covariate, N_BINARY, N_COVARIATES};
use crate::outcome::ScenarioSpec;
use crate::population::{Cohort, PopulationSpec, Prevalence};
use crate::selection::WeightingSpec;
use crate::stats::CompensatedSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BalanceError {
    #[error("standard deviation must be > 0 (got {0})")]
    NonPositiveSd(f64),
    #[error("binary SMD undefined: zero pooled variance for p_a = {p_a}, p_b = {p_b}")]
    ZeroVariance { p_a: f64, p_b: f64 },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("weight at row {row} is not positive ({value})")]
    NonPositiveWeight { row: usize, value: f64 },
    #[error("{weights} weights for a cohort of {rows} rows")]
    LengthMismatch { weights: usize, rows: usize },
    #[error("cohort `{0}` is empty")]
    EmptyCohort(String),
    #[error("population `{0}` not present in the report")]
    UnknownPopulation(String),
}

/// `(mean_a - mean_b) / sqrt((sd_a^2 + sd_b^2) / 2)`.
pub fn smd_continuous(mean_a: f64, sd_a: f64, mean_b: f64, sd_b: f64) -> Result<f64, BalanceError> {
    for sd in [sd_a, sd_b] {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(BalanceError::NonPositiveSd(sd));
        }
    }
    Ok((mean_a - mean_b) / ((sd_a * sd_a + sd_b * sd_b) / 2.0).sqrt())
}

/// `(p_a - p_b) / sqrt((p_a(1-p_a) + p_b(1-p_b)) / 2)`.
pub fn smd_binary(p_a: f64, p_b: f64) -> Result<f64, BalanceError> {
    for p in [p_a, p_b] {
        if !(0.0..=1.0).contains(&p) {
            return Err(BalanceError::InvalidProbability(p));
        }
    }
    let pooled = (p_a * (1.0 - p_a) + p_b * (1.0 - p_b)) / 2.0;
    if pooled <= 0.0 {
        return Err(BalanceError::ZeroVariance { p_a, p_b });
    }
    Ok((p_a - p_b) / pooled.sqrt())
}

/// First and second moments of every covariate for one population.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMoments {
    pub name: String,
    pub age_mean: f64,
    pub age_sd: f64,
    pub prevalence: [Prevalence; N_BINARY],
}

impl CovariateMoments {
    pub fn from_spec(spec: &PopulationSpec) -> Self {
        CovariateMoments {
            name: spec.name.clone(),
            age_mean: spec.age_mean,
            age_sd: spec.age_sd,
            prevalence: spec.prevalence,
        }
    }

    /// Sample moments (age SD with the n - 1 denominator).
    pub fn from_cohort(cohort: &Cohort) -> Result<Self, BalanceError> {
        let n = cohort.len();
        if n == 0 {
            return Err(BalanceError::EmptyCohort(cohort.spec_name().to_string()));
        }
        let age_mean = crate::stats::mean(cohort.age()).unwrap();
        let age_sd = crate::stats::sample_sd(cohort.age());
        let mut prevalence = [Prevalence::Unmeasured; N_BINARY];
        for c in Covariate::BINARY {
            if let Some(k) = cohort.count(c) {
                prevalence[c.binary_index().unwrap()] = Prevalence::Measured(k as f64 / n as f64);
            }
        }
        Ok(CovariateMoments {
            name: cohort.spec_name().to_string(),
            age_mean,
            age_sd,
            prevalence,
        })
    }

    /// Weighted moments: `sum(w x) / sum(w)` and `sum(w (x - m)^2) / sum(w)`.
    pub fn weighted(cohort: &Cohort, weights: &[f64]) -> Result<Self, BalanceError> {
        if weights.len() != cohort.len() {
            return Err(BalanceError::LengthMismatch {
                weights: weights.len(),
                rows: cohort.len(),
            });
        }
        if cohort.is_empty() {
            return Err(BalanceError::EmptyCohort(cohort.spec_name().to_string()));
        }
        if let Some((row, &value)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(BalanceError::NonPositiveWeight { row, value });
        }
        let mut total = CompensatedSum::new();
        let mut age_sum = CompensatedSum::new();
        for (w, a) in weights.iter().zip(cohort.age()) {
            total.add(*w);
            age_sum.add(w * a);
        }
        let total = total.value();
        let age_mean = age_sum.value() / total;
        let mut ss = CompensatedSum::new();
        for (w, a) in weights.iter().zip(cohort.age()) {
            ss.add(w * (a - age_mean) * (a - age_mean));
        }
        let mut prevalence = [Prevalence::Unmeasured; N_BINARY];
        for c in Covariate::BINARY {
            if let Some(col) = cohort.column(c) {
                let mut s = CompensatedSum::new();
                for (i, w) in weights.iter().enumerate() {
                    s.add(w * col.get(i));
                }
                // clamp rounding excursions just outside [0, 1]
                let p = (s.value() / total).clamp(0.0, 1.0);
                prevalence[c.binary_index().unwrap()] = Prevalence::Measured(p);
            }
        }
        Ok(CovariateMoments {
            name: cohort.spec_name().to_string(),
            age_mean,
            age_sd: (ss.value() / total).sqrt(),
            prevalence,
        })
    }

    fn prevalence_of(&self, c: Covariate) -> Option<f64> {
        c.binary_index().and_then(|i| self.prevalence[i].value())
    }
}

/// Signed SMD of every covariate, comparator against reference. `None`
/// where either side leaves the covariate unmeasured.
pub fn smd_row(
    comparator: &CovariateMoments,
    reference: &CovariateMoments,
) -> Result<[Option<f64>; N_COVARIATES], BalanceError> {
    let mut row = [None; N_COVARIATES];
    row[Covariate::Age.index()] = Some(smd_continuous(
        comparator.age_mean,
        comparator.age_sd,
        reference.age_mean,
        reference.age_sd,
    )?);
    for c in Covariate::BINARY {
        if let (Some(a), Some(b)) = (comparator.prevalence_of(c), reference.prevalence_of(c)) {
            row[c.index()] = Some(smd_binary(a, b)?);
        }
    }
    Ok(row)
}

/// Per-covariate signed SMDs of several populations against one reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub reference_name: String,
    pub populations: Vec<String>,
    /// One row per population, indexed by [`Covariate::index`].
    pub cells: Vec<[Option<f64>; N_COVARIATES]>,
}

/// One aggregate divergence score.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCell {
    pub population: String,
    pub value: f64,
}

impl BalanceReport {
    pub fn from_moments(reference: &CovariateMoments, comparators: &[CovariateMoments]) -> Result<Self, BalanceError> {
        let cells = comparators
            .iter()
            .map(|m| smd_row(m, reference))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BalanceReport {
            reference_name: reference.name.clone(),
            populations: comparators.iter().map(|m| m.name.clone()).collect(),
            cells,
        })
    }

    /// Parameter-level report: every spec except the reference, in order.
    pub fn from_specs(reference: &PopulationSpec, specs: &[PopulationSpec]) -> Result<Self, BalanceError> {
        let others: Vec<_> = specs
            .iter()
            .filter(|s| s.name != reference.name)
            .map(CovariateMoments::from_spec)
            .collect();
        Self::from_moments(&CovariateMoments::from_spec(reference), &others)
    }

    /// Report from externally supplied cells (e.g. a published table).
    pub fn from_cells(reference_name: impl Into<String>, rows: Vec<(String, [Option<f64>; N_COVARIATES])>) -> Self {
        let (populations, cells) = rows.into_iter().unzip();
        BalanceReport {
            reference_name: reference_name.into(),
            populations,
            cells,
        }
    }

    pub fn row(&self, population: &str) -> Option<&[Option<f64>; N_COVARIATES]> {
        self.populations
            .iter()
            .position(|p| p == population)
            .map(|i| &self.cells[i])
    }

    pub fn smd(&self, population: &str, c: Covariate) -> Result<Option<f64>, BalanceError> {
        self.row(population)
            .map(|r| r[c.index()])
            .ok_or_else(|| BalanceError::UnknownPopulation(population.to_string()))
    }

    /// Sum of signed SMDs over `modifiers` for each population. Unmeasured
    /// components contribute zero.
    pub fn aggregate(&self, modifiers: &[Covariate]) -> Vec<AggregateCell> {
        self.populations
            .iter()
            .zip(&self.cells)
            .map(|(p, row)| AggregateCell {
                population: p.clone(),
                // an empty sum is -0.0 in std; start from +0.0 instead
                value: modifiers.iter().filter_map(|c| row[c.index()]).fold(0.0, |a, b| a + b),
            })
            .collect()
    }

    /// [`aggregate`](Self::aggregate) with covariates given by name.
    pub fn aggregate_by_name<S: AsRef<str>>(
        &self,
        modifiers: &[S],
    ) -> Result<Vec<AggregateCell>, crate::covariate::UnknownCovariate> {
        let cs = crate::covariate::parse_covariate_list(modifiers)?;
        Ok(self.aggregate(&cs))
    }

    pub fn absolute(&self) -> BalanceReport {
        BalanceReport {
            cells: self.cells.iter().map(|r| r.map(|v| v.map(f64::abs))).collect(),
            ..self.clone()
        }
    }

    /// Long-format rows ordered by covariate, then population.
    pub fn love_plot_data(&self) -> Vec<LovePlotRow> {
        let mut rows = Vec::with_capacity(self.populations.len() * N_COVARIATES);
        for c in Covariate::ALL {
            for (p, cells) in self.populations.iter().zip(&self.cells) {
                let v = cells[c.index()];
                rows.push(LovePlotRow {
                    population: p.clone(),
                    covariate: c,
                    signed_smd: v,
                    abs_smd: v.map(f64::abs),
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LovePlotRow {
    pub population: String,
    pub covariate: Covariate,
    pub signed_smd: Option<f64>,
    pub abs_smd: Option<f64>,
}

/// Post-weighting SMDs of the trial cohort against a target's parameters.
pub fn weighted_balance(
    trial: &Cohort,
    weights: &[f64],
    target: &PopulationSpec,
) -> Result<[Option<f64>; N_COVARIATES], BalanceError> {
    let w = CovariateMoments::weighted(trial, weights)?;
    smd_row(&w, &CovariateMoments::from_spec(target))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BalanceRowKind {
    Covariate(Covariate),
    Aggregate { scenario: String, weighting: String },
}

/// One row of the wide balance table.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceTableRow {
    pub kind: BalanceRowKind,
    /// Aligned with [`BalanceReport::populations`]; `None` renders empty.
    pub values: Vec<Option<f64>>,
}

/// Wide table: one row per covariate, then aggregate rows per scenario.
///
/// Each scenario gets a row for the reference weighting (all modifiers).
/// Other weightings get a row only when their covariates cover a nonempty,
/// strict subset of the scenario's modifiers; the analytic sample is not
/// reweighted, so its cell in those rows is empty.
pub fn balance_table(
    report: &BalanceReport,
    scenarios: &[ScenarioSpec],
    weightings: &[WeightingSpec],
    reference_weighting: &str,
    analytic_sample: &str,
) -> Vec<BalanceTableRow> {
    let mut rows: Vec<BalanceTableRow> = Covariate::ALL
        .into_iter()
        .map(|c| BalanceTableRow {
            kind: BalanceRowKind::Covariate(c),
            values: report.cells.iter().map(|r| r[c.index()]).collect(),
        })
        .collect();
    for s in scenarios {
        rows.push(BalanceTableRow {
            kind: BalanceRowKind::Aggregate {
                scenario: s.name.clone(),
                weighting: reference_weighting.to_string(),
            },
            values: report
                .aggregate(&s.modifiers)
                .into_iter()
                .map(|a| Some(a.value))
                .collect(),
        });
        for w in weightings.iter().filter(|w| w.name != reference_weighting) {
            let subset: Vec<Covariate> = s
                .modifiers
                .iter()
                .copied()
                .filter(|c| w.covariates.contains(c))
                .collect();
            if subset.is_empty() || subset.len() == s.modifiers.len() {
                continue;
            }
            let values = report
                .aggregate(&subset)
                .into_iter()
                .map(|a| (a.population != analytic_sample).then_some(a.value))
                .collect();
            rows.push(BalanceTableRow {
                kind: BalanceRowKind::Aggregate {
                    scenario: s.name.clone(),
                    weighting: w.name.clone(),
                },
                values,
            });
        }
    }
    rows
}

//! Population specifications and synthetic cohort sampling.
//!
//! A [`PopulationSpec`] carries only marginal summaries: age mean and SD plus
//! one prevalence per binary covariate. Cohorts are drawn with all covariates
//! mutually independent; age is an untruncated normal.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariate::{Covariate, N_BINARY};
use crate::seed;

/// Prevalence of a binary covariate, or a structural absence of the column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prevalence {
    Measured(f64),
    Unmeasured,
}

impl Prevalence {
    pub fn value(self) -> Option<f64> {
        match self {
            Prevalence::Measured(p) => Some(p),
            Prevalence::Unmeasured => None,
        }
    }

    pub fn is_measured(self) -> bool {
        matches!(self, Prevalence::Measured(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    AnalyticSample,
    Target,
    Reference,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::AnalyticSample => "analytic_sample",
            Role::Target => "target",
            Role::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("population `{population}`: invalid `{field}`: {reason}")]
    InvalidField {
        population: String,
        field: String,
        reason: String,
    },
}

impl SpecError {
    fn field(spec: &PopulationSpec, field: &str, reason: impl Into<String>) -> Self {
        SpecError::InvalidField {
            population: spec.name.clone(),
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub name: String,
    pub role: Role,
    pub n_simulated: usize,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Indexed by [`Covariate::binary_index`].
    pub prevalence: [Prevalence; N_BINARY],
}

impl PopulationSpec {
    /// Prevalence of a binary covariate; `None` for age.
    pub fn prevalence_of(&self, c: Covariate) -> Option<Prevalence> {
        c.binary_index().map(|i| self.prevalence[i])
    }

    pub fn is_measured(&self, c: Covariate) -> bool {
        self.prevalence_of(c).is_none_or(Prevalence::is_measured)
    }

    /// Covariates whose column is structurally absent.
    pub fn unmeasured(&self) -> Vec<Covariate> {
        Covariate::ALL.into_iter().filter(|c| !self.is_measured(*c)).collect()
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.name.trim().is_empty() {
            return Err(SpecError::field(self, "name", "must be nonempty"));
        }
        if self.n_simulated == 0 {
            return Err(SpecError::field(self, "n_simulated", "must be > 0"));
        }
        if !self.age_mean.is_finite() {
            return Err(SpecError::field(self, "age_mean", "must be finite"));
        }
        if !(self.age_sd.is_finite() && self.age_sd > 0.0) {
            return Err(SpecError::field(self, "age_sd", "must be finite and > 0"));
        }
        for c in Covariate::BINARY {
            match self.prevalence_of(c).unwrap() {
                Prevalence::Measured(p) => {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(SpecError::field(
                            self,
                            c.name(),
                            format!("prevalence {p} outside [0, 1]"),
                        ));
                    }
                }
                Prevalence::Unmeasured => {
                    if !c.is_clinical() {
                        return Err(SpecError::field(
                            self,
                            c.name(),
                            "only clinical covariates may be unmeasured",
                        ));
                    }
                }
            }
        }
        let black = self
            .prevalence_of(Covariate::RaceBlack)
            .and_then(Prevalence::value)
            .unwrap_or(0.0);
        let other = self
            .prevalence_of(Covariate::RaceOther)
            .and_then(Prevalence::value)
            .unwrap_or(0.0);
        if black + other > 1.0 + 1e-12 {
            return Err(SpecError::field(
                self,
                "race_other",
                format!("race_black + race_other = {} exceeds 1", black + other),
            ));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn spec(
    name: &str,
    role: Role,
    n: usize,
    age: (f64, f64),
    female: f64,
    black: f64,
    other: f64,
    hispanic: f64,
    clinical: Option<[f64; 4]>,
) -> PopulationSpec {
    use Prevalence::*;
    let clin = match clinical {
        Some(c) => c.map(Measured),
        None => [Unmeasured; 4],
    };
    PopulationSpec {
        name: name.to_string(),
        role,
        n_simulated: n,
        age_mean: age.0,
        age_sd: age.1,
        prevalence: [
            Measured(female),
            Measured(black),
            Measured(other),
            Measured(hispanic),
            clin[0],
            clin[1],
            clin[2],
            clin[3],
        ],
    }
}

/// The five built-in populations in study order: analytic sample, convenience
/// registry, reference, overly inclusive health-system population and the
/// general (census) population.
pub fn builtin_specs() -> Vec<PopulationSpec> {
    vec![
        spec(
            "trial",
            Role::AnalyticSample,
            5_000,
            (61.8, 12.7),
            0.504,
            0.225,
            0.065,
            0.090,
            Some([0.784, 0.105, 0.230, 0.092]),
        ),
        spec(
            "registry",
            Role::Target,
            75_000,
            (67.9, 12.6),
            0.455,
            0.117,
            0.030,
            0.054,
            Some([0.872, 0.268, 0.579, 0.155]),
        ),
        spec(
            "pcornet_disease",
            Role::Reference,
            150_000,
            (63.0, 13.7),
            0.521,
            0.232,
            0.111,
            0.160,
            Some([0.770, 0.149, 0.249, 0.229]),
        ),
        spec(
            "pcornet_overall",
            Role::Target,
            300_000,
            (41.4, 22.2),
            0.569,
            0.167,
            0.134,
            0.150,
            Some([0.239, 0.030, 0.070, 0.050]),
        ),
        spec(
            "us_census",
            Role::Target,
            500_000,
            (39.1, 23.5),
            0.509,
            0.135,
            0.105,
            0.187,
            None,
        ),
    ]
}

pub fn builtin_spec(name: &str) -> Option<PopulationSpec> {
    builtin_specs().into_iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaceCategory {
    White,
    Black,
    Other,
}

/// Indicator coding with white as the reference level: `(race_black, race_other)`.
pub fn race_indicators(category: RaceCategory) -> (u8, u8) {
    match category {
        RaceCategory::White => (0, 0),
        RaceCategory::Black => (1, 0),
        RaceCategory::Other => (0, 1),
    }
}

/// One individual's covariates; unmeasured binary columns are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateRecord {
    pub age: f64,
    pub binary: [Option<u8>; N_BINARY],
}

impl CovariateRecord {
    pub fn get(&self, c: Covariate) -> Option<f64> {
        match c.binary_index() {
            None => Some(self.age),
            Some(i) => self.binary[i].map(f64::from),
        }
    }
}

/// Borrowed view of one cohort column.
#[derive(Debug, Clone, Copy)]
pub enum Column<'a> {
    Continuous(&'a [f64]),
    Binary(&'a [u8]),
}

impl Column<'_> {
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Column::Continuous(v) => v[i],
            Column::Binary(v) => f64::from(v[i]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CohortError {
    #[error("column `{column}` has {got} rows, expected {expected}")]
    LengthMismatch {
        column: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("row {row}: race_black and race_other are both 1")]
    RaceConflict { row: usize },
    #[error("column `{column}` row {row}: value {value} is not 0/1")]
    NotBinary {
        column: &'static str,
        row: usize,
        value: u8,
    },
    #[error("column `{0}` must be measured")]
    RequiredColumn(&'static str),
}

/// A realized sample stored column-wise. Measurement is a column property.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    spec_name: String,
    age: Vec<f64>,
    binary: [Option<Vec<u8>>; N_BINARY],
}

impl Cohort {
    /// Assembles a cohort from explicit columns, checking the cohort invariants.
    pub fn from_columns(
        spec_name: impl Into<String>,
        age: Vec<f64>,
        binary: [Option<Vec<u8>>; N_BINARY],
    ) -> Result<Self, CohortError> {
        let n = age.len();
        for c in Covariate::BINARY {
            if let Some(col) = &binary[c.binary_index().unwrap()] {
                if col.len() != n {
                    return Err(CohortError::LengthMismatch {
                        column: c.name(),
                        expected: n,
                        got: col.len(),
                    });
                }
                if let Some((row, &value)) = col.iter().enumerate().find(|(_, v)| **v > 1) {
                    return Err(CohortError::NotBinary {
                        column: c.name(),
                        row,
                        value,
                    });
                }
            } else if !c.is_clinical() {
                return Err(CohortError::RequiredColumn(c.name()));
            }
        }
        let black = binary[Covariate::RaceBlack.binary_index().unwrap()].as_ref().unwrap();
        let other = binary[Covariate::RaceOther.binary_index().unwrap()].as_ref().unwrap();
        if let Some(row) = black.iter().zip(other).position(|(b, o)| *b == 1 && *o == 1) {
            return Err(CohortError::RaceConflict { row });
        }
        Ok(Cohort {
            spec_name: spec_name.into(),
            age,
            binary,
        })
    }

    pub fn spec_name(&self) -> &str {
        &self.spec_name
    }

    pub fn len(&self) -> usize {
        self.age.len()
    }

    pub fn is_empty(&self) -> bool {
        self.age.is_empty()
    }

    pub fn age(&self) -> &[f64] {
        &self.age
    }

    /// Column for `c`, or `None` when the column is unmeasured.
    pub fn column(&self, c: Covariate) -> Option<Column<'_>> {
        match c.binary_index() {
            None => Some(Column::Continuous(&self.age)),
            Some(i) => self.binary[i].as_deref().map(Column::Binary),
        }
    }

    pub fn is_measured(&self, c: Covariate) -> bool {
        self.column(c).is_some()
    }

    pub fn record(&self, i: usize) -> CovariateRecord {
        let mut binary = [None; N_BINARY];
        for (slot, col) in binary.iter_mut().zip(&self.binary) {
            *slot = col.as_ref().map(|v| v[i]);
        }
        CovariateRecord {
            age: self.age[i],
            binary,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = CovariateRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    /// Count of ones in a measured binary column.
    pub fn count(&self, c: Covariate) -> Option<usize> {
        let i = c.binary_index()?;
        self.binary[i].as_ref().map(|v| v.iter().map(|&x| x as usize).sum())
    }
}

/// Samples `spec.n_simulated` individuals.
pub fn sample_population(spec: &PopulationSpec, seed: u64) -> Result<Cohort, SpecError> {
    sample_population_n(spec, spec.n_simulated, seed)
}

/// Samples `n` individuals from `spec`. Deterministic in `(spec, n, seed)`.
///
/// Columns are drawn one after another from a single stream: age, female,
/// race (one categorical draw per row), hispanic, then the clinical columns.
/// Unmeasured columns consume no draws.
pub fn sample_population_n(spec: &PopulationSpec, n: usize, seed: u64) -> Result<Cohort, SpecError> {
    spec.validate()?;
    let mut rng = seed::rng(seed);

    let normal = Normal::new(spec.age_mean, spec.age_sd).map_err(|e| SpecError::InvalidField {
        population: spec.name.clone(),
        field: "age_sd".into(),
        reason: e.to_string(),
    })?;
    let age: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();

    let mut binary: [Option<Vec<u8>>; N_BINARY] = Default::default();
    let bernoulli = |rng: &mut rand_chacha::ChaCha8Rng, c: Covariate| -> Option<Vec<u8>> {
        let p = spec.prevalence_of(c).unwrap().value()?;
        Some((0..n).map(|_| u8::from(rng.random::<f64>() < p)).collect())
    };

    binary[Covariate::Female.binary_index().unwrap()] = bernoulli(&mut rng, Covariate::Female);

    let p_black = spec
        .prevalence_of(Covariate::RaceBlack)
        .and_then(Prevalence::value)
        .unwrap_or(0.0);
    let p_other = spec
        .prevalence_of(Covariate::RaceOther)
        .and_then(Prevalence::value)
        .unwrap_or(0.0);
    let mut black = Vec::with_capacity(n);
    let mut other = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let category = if u < p_black {
            RaceCategory::Black
        } else if u < p_black + p_other {
            RaceCategory::Other
        } else {
            RaceCategory::White
        };
        let (b, o) = race_indicators(category);
        black.push(b);
        other.push(o);
    }
    binary[Covariate::RaceBlack.binary_index().unwrap()] = Some(black);
    binary[Covariate::RaceOther.binary_index().unwrap()] = Some(other);

    for c in [
        Covariate::Hispanic,
        Covariate::Hypertension,
        Covariate::HeartFailure,
        Covariate::Cad,
        Covariate::Pad,
    ] {
        binary[c.binary_index().unwrap()] = bernoulli(&mut rng, c);
    }

    Ok(Cohort {
        spec_name: spec.name.clone(),
        age,
        binary,
    })
}

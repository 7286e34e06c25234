//! Linear potential-outcome model with treatment-effect modification.
//!
//! ```text
//! Y(0) = mu0 + beta'X + eps
//! Y(1) = mu0 + k*shift + (beta + k*delta)'X + eps
//! ```
//!
//! `eps` is drawn once per individual and shared by both potential outcomes,
//! so the individual effect `k*(shift + delta'X)` carries no noise. Age enters
//! `X` standardized against an anchor population.

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::covariate::{Covariate, N_COVARIATES};
use crate::population::{Cohort, PopulationSpec, Prevalence};
use crate::seed;

pub const DEFAULT_MU0: f64 = 3.1;
pub const DEFAULT_TREATMENT_SHIFT: f64 = 5.4;
pub const DEFAULT_BETA: f64 = -0.50;
pub const DEFAULT_DELTA: f64 = 1.34;
pub const DEFAULT_SIGMA_EPS: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OutcomeError {
    #[error("scenario `{scenario}`: invalid `{field}`: {reason}")]
    InvalidScenario {
        scenario: String,
        field: String,
        reason: String,
    },
    #[error("covariate `{column}` is unmeasured in `{population}` but required by scenario `{scenario}`")]
    UnmeasuredColumn {
        population: String,
        scenario: String,
        column: Covariate,
    },
    #[error("effect scale must be finite and >= 0, got {0}")]
    InvalidScale(f64),
}

/// Location and scale used to standardize age before it enters the outcome model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeAnchor {
    pub mean: f64,
    pub sd: f64,
}

impl AgeAnchor {
    pub fn from_spec(spec: &PopulationSpec) -> Self {
        AgeAnchor {
            mean: spec.age_mean,
            sd: spec.age_sd,
        }
    }

    #[inline]
    pub fn standardize(&self, age: f64) -> f64 {
        (age - self.mean) / self.sd
    }
}

/// `(age - anchor.age_mean) / anchor.age_sd`.
pub fn standardize_age(age: f64, anchor: &PopulationSpec) -> f64 {
    AgeAnchor::from_spec(anchor).standardize(age)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    /// Effect modifiers in canonical order.
    pub modifiers: Vec<Covariate>,
    pub mu0: f64,
    pub treatment_shift: f64,
    /// Main effect per covariate, indexed by [`Covariate::index`].
    pub beta: [f64; N_COVARIATES],
    /// Interaction coefficient per covariate; only entries for modifiers are used.
    pub delta: [f64; N_COVARIATES],
    pub sigma_eps: f64,
    pub effect_scale: f64,
}

impl ScenarioSpec {
    /// A scenario with default parameters and the given modifiers.
    pub fn with_modifiers(name: impl Into<String>, modifiers: &[Covariate]) -> Self {
        let mut modifiers = modifiers.to_vec();
        modifiers.sort();
        modifiers.dedup();
        ScenarioSpec {
            name: name.into(),
            modifiers,
            mu0: DEFAULT_MU0,
            treatment_shift: DEFAULT_TREATMENT_SHIFT,
            beta: [DEFAULT_BETA; N_COVARIATES],
            delta: [DEFAULT_DELTA; N_COVARIATES],
            sigma_eps: DEFAULT_SIGMA_EPS,
            effect_scale: 1.0,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        ScenarioSpec {
            effect_scale: k,
            ..self.clone()
        }
    }

    pub fn is_modifier(&self, c: Covariate) -> bool {
        self.modifiers.contains(&c)
    }

    /// Unscaled interaction coefficient: `delta` for modifiers, zero otherwise.
    pub fn interaction(&self, c: Covariate) -> f64 {
        if self.is_modifier(c) {
            self.delta[c.index()]
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<(), OutcomeError> {
        let bad = |field: &str, reason: &str| OutcomeError::InvalidScenario {
            scenario: self.name.clone(),
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if self.name.trim().is_empty() {
            return Err(bad("name", "must be nonempty"));
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps > 0.0) {
            return Err(bad("sigma_eps", "must be finite and > 0"));
        }
        if !(self.effect_scale.is_finite() && self.effect_scale > 0.0) {
            return Err(bad("effect_scale", "must be finite and > 0"));
        }
        if !(self.mu0.is_finite() && self.treatment_shift.is_finite()) {
            return Err(bad("mu0", "mu0 and treatment_shift must be finite"));
        }
        if self.beta.iter().chain(&self.delta).any(|v| !v.is_finite()) {
            return Err(bad("beta", "coefficients must be finite"));
        }
        Ok(())
    }

    /// Columns the outcome model reads: nonzero main effect or a modifier.
    pub fn required_columns(&self) -> Vec<Covariate> {
        Covariate::ALL
            .into_iter()
            .filter(|c| self.beta[c.index()] != 0.0 || self.interaction(*c) != 0.0)
            .collect()
    }
}

/// The four built-in heterogeneity structures.
pub fn scenario_catalog() -> Vec<ScenarioSpec> {
    use Covariate::*;
    vec![
        ScenarioSpec::with_modifiers("all_modifiers", &Covariate::ALL),
        ScenarioSpec::with_modifiers("four_modifiers", &[Age, Female, Hypertension, Pad]),
        ScenarioSpec::with_modifiers("one_modifier", &[Hypertension]),
        ScenarioSpec::with_modifiers("no_modifiers", &[]),
    ]
}

pub fn builtin_scenario(name: &str) -> Option<ScenarioSpec> {
    scenario_catalog().into_iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// Individual treatment effects, computed directly from the model rather
    /// than as `y1 - y0` so the no-noise property holds bit-exactly.
    pub te: Vec<f64>,
}

impl PotentialOutcomes {
    pub fn len(&self) -> usize {
        self.te.len()
    }

    pub fn is_empty(&self) -> bool {
        self.te.is_empty()
    }
}

fn check_columns(cohort: &Cohort, scenario: &ScenarioSpec) -> Result<(), OutcomeError> {
    for c in scenario.required_columns() {
        if !cohort.is_measured(c) {
            return Err(OutcomeError::UnmeasuredColumn {
                population: cohort.spec_name().to_string(),
                scenario: scenario.name.clone(),
                column: c,
            });
        }
    }
    Ok(())
}

/// Individual treatment effects `k*(shift + delta'X)` without drawing noise.
///
/// `effect_scale` overrides the scenario's own scale and may be zero.
pub fn treatment_effects(
    cohort: &Cohort,
    scenario: &ScenarioSpec,
    anchor: AgeAnchor,
    effect_scale: f64,
) -> Result<Vec<f64>, OutcomeError> {
    if !(effect_scale.is_finite() && effect_scale >= 0.0) {
        return Err(OutcomeError::InvalidScale(effect_scale));
    }
    check_columns(cohort, scenario)?;
    let n = cohort.len();
    let mut te = vec![scenario.treatment_shift; n];
    for c in &scenario.modifiers {
        let d = scenario.interaction(*c);
        let col = cohort.column(*c).expect("checked above");
        if *c == Covariate::Age {
            for (t, age) in te.iter_mut().zip(cohort.age()) {
                *t += d * anchor.standardize(*age);
            }
        } else {
            for (i, t) in te.iter_mut().enumerate() {
                *t += d * col.get(i);
            }
        }
    }
    for t in &mut te {
        *t *= effect_scale;
    }
    Ok(te)
}

/// Draws both potential outcomes for every individual in `cohort`.
pub fn generate_outcomes(
    cohort: &Cohort,
    scenario: &ScenarioSpec,
    anchor: AgeAnchor,
    seed: u64,
) -> Result<PotentialOutcomes, OutcomeError> {
    scenario.validate()?;
    generate_outcomes_scaled(cohort, scenario, anchor, scenario.effect_scale, seed)
}

/// As [`generate_outcomes`] with an explicit effect scale (zero allowed).
pub fn generate_outcomes_scaled(
    cohort: &Cohort,
    scenario: &ScenarioSpec,
    anchor: AgeAnchor,
    effect_scale: f64,
    seed: u64,
) -> Result<PotentialOutcomes, OutcomeError> {
    let te = treatment_effects(cohort, scenario, anchor, effect_scale)?;
    let n = cohort.len();
    let mut y0 = vec![scenario.mu0; n];
    for c in Covariate::ALL {
        let b = scenario.beta[c.index()];
        if b == 0.0 {
            continue;
        }
        let col = cohort.column(c).expect("checked in treatment_effects");
        if c == Covariate::Age {
            for (y, age) in y0.iter_mut().zip(cohort.age()) {
                *y += b * anchor.standardize(*age);
            }
        } else {
            for (i, y) in y0.iter_mut().enumerate() {
                *y += b * col.get(i);
            }
        }
    }
    let noise = Normal::new(0.0, scenario.sigma_eps).map_err(|e| OutcomeError::InvalidScenario {
        scenario: scenario.name.clone(),
        field: "sigma_eps".into(),
        reason: e.to_string(),
    })?;
    let mut rng = seed::rng(seed);
    for y in &mut y0 {
        *y += noise.sample(&mut rng);
    }
    let y1 = y0.iter().zip(&te).map(|(a, t)| a + t).collect();
    Ok(PotentialOutcomes { y0, y1, te })
}

/// Population-level expected treatment effect for `spec` under `scenario`,
/// from the spec's marginal parameters alone.
pub fn expected_sate(
    spec: &PopulationSpec,
    scenario: &ScenarioSpec,
    anchor: &PopulationSpec,
) -> Result<f64, OutcomeError> {
    let anchor = AgeAnchor::from_spec(anchor);
    let k = scenario.effect_scale;
    let mut modification = 0.0;
    for c in &scenario.modifiers {
        let mean_x = match spec.prevalence_of(*c) {
            None => anchor.standardize(spec.age_mean),
            Some(Prevalence::Measured(p)) => p,
            Some(Prevalence::Unmeasured) => {
                return Err(OutcomeError::UnmeasuredColumn {
                    population: spec.name.clone(),
                    scenario: scenario.name.clone(),
                    column: *c,
                })
            }
        };
        modification += scenario.interaction(*c) * mean_x;
    }
    Ok(k * scenario.treatment_shift + k * modification)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariate::N_BINARY;
    use crate::population::{builtin_spec, sample_population_n};

    fn trial() -> PopulationSpec {
        builtin_spec("trial").unwrap()
    }

    fn single_row(age: f64, ones: &[Covariate]) -> Cohort {
        let mut binary: [Option<Vec<u8>>; N_BINARY] = Default::default();
        for c in Covariate::BINARY {
            binary[c.binary_index().unwrap()] = Some(vec![u8::from(ones.contains(&c))]);
        }
        Cohort::from_columns("row", vec![age], binary).unwrap()
    }

    #[test]
    fn catalog_modifier_sets() {
        let cat = scenario_catalog();
        let by = |n: &str| cat.iter().find(|s| s.name == n).unwrap().modifiers.clone();
        use Covariate::*;
        assert_eq!(by("four_modifiers"), vec![Age, Female, Hypertension, Pad]);
        assert_eq!(by("one_modifier"), vec![Hypertension]);
        assert!(by("no_modifiers").is_empty());
        assert_eq!(by("all_modifiers").len(), 9);
        let s = &cat[0];
        assert_eq!(
            (s.mu0, s.treatment_shift, s.sigma_eps, s.effect_scale),
            (3.1, 5.4, 7.0, 1.0)
        );
        assert!(s.beta.iter().all(|b| *b == -0.5));
        assert!(s.delta.iter().all(|d| *d == 1.34));
    }

    #[test]
    fn age_standardization() {
        let t = trial();
        assert_eq!(standardize_age(61.8, &t), 0.0);
        assert!((standardize_age(74.5, &t) - 1.0).abs() < 1e-12);
        assert!((standardize_age(41.4, &t) - (-1.606_299_212_598_425)).abs() < 1e-9);
    }

    #[test]
    fn constant_effect_without_modifiers() {
        let cohort = sample_population_n(&trial(), 300, 5).unwrap();
        let s = builtin_scenario("no_modifiers").unwrap();
        let out = generate_outcomes(&cohort, &s, AgeAnchor::from_spec(&trial()), 9).unwrap();
        assert!(out.te.iter().all(|t| *t == 5.4));
        assert_eq!(out.len(), 300);
    }

    #[test]
    fn single_modifier_plug_in() {
        let cohort = single_row(61.8, &[Covariate::Hypertension]);
        let s = builtin_scenario("one_modifier").unwrap();
        let out = generate_outcomes(&cohort, &s, AgeAnchor::from_spec(&trial()), 1).unwrap();
        assert!((out.te[0] - 6.74).abs() < 1e-12);
        // y0 = 3.1 - 0.5 (hypertension) + eps; y1 - y0 = te
        assert!((out.y1[0] - out.y0[0] - 6.74).abs() < 1e-12);
    }

    #[test]
    fn effect_scale_is_linear() {
        let cohort = sample_population_n(&trial(), 200, 8).unwrap();
        let anchor = AgeAnchor::from_spec(&trial());
        let s = builtin_scenario("all_modifiers").unwrap();
        let one = generate_outcomes(&cohort, &s, anchor, 3).unwrap();
        let two = generate_outcomes(&cohort, &s.scaled(2.0), anchor, 3).unwrap();
        for (a, b) in one.te.iter().zip(&two.te) {
            assert!((b - 2.0 * a).abs() < 1e-12);
        }
        // noise is shared with the same seed, so y0 is unchanged by k
        assert_eq!(one.y0, two.y0);
    }

    #[test]
    fn identical_covariates_identical_effects() {
        let anchor = AgeAnchor::from_spec(&trial());
        let s = builtin_scenario("all_modifiers").unwrap();
        let a = generate_outcomes(&single_row(55.0, &[Covariate::Female]), &s, anchor, 1).unwrap();
        let b = generate_outcomes(&single_row(55.0, &[Covariate::Female]), &s, anchor, 2).unwrap();
        assert_ne!(a.y0, b.y0);
        assert_eq!(a.te, b.te);
    }

    #[test]
    fn unmeasured_required_column_is_rejected() {
        let census = builtin_spec("us_census").unwrap();
        let cohort = sample_population_n(&census, 10, 1).unwrap();
        let s = builtin_scenario("no_modifiers").unwrap();
        let err = generate_outcomes(&cohort, &s, AgeAnchor::from_spec(&trial()), 1).unwrap_err();
        assert!(matches!(
            err,
            OutcomeError::UnmeasuredColumn {
                column: Covariate::Hypertension,
                ..
            }
        ));

        // zero main effects on clinical columns make the census usable
        let mut s = s;
        for c in Covariate::CLINICAL {
            s.beta[c.index()] = 0.0;
        }
        assert!(generate_outcomes(&cohort, &s, AgeAnchor::from_spec(&trial()), 1).is_ok());
    }

    #[test]
    fn analytic_sate_oracle() {
        let t = trial();
        let e = |n: &str| expected_sate(&t, &builtin_scenario(n).unwrap(), &t).unwrap();
        assert!((e("no_modifiers") - 5.4).abs() < 1e-12);
        assert!((e("one_modifier") - (5.4 + 1.34 * 0.784)).abs() < 1e-12);
        assert!((e("four_modifiers") - (5.4 + 1.34 * (0.504 + 0.784 + 0.092))).abs() < 1e-12);
        assert!((e("four_modifiers") - 7.249).abs() < 5e-4);
        assert!((e("one_modifier") - 6.451).abs() < 5e-4);
        let census = builtin_spec("us_census").unwrap();
        assert!(expected_sate(&census, &builtin_scenario("one_modifier").unwrap(), &t).is_err());
        assert!(expected_sate(&census, &builtin_scenario("no_modifiers").unwrap(), &t).is_ok());
    }

    #[test]
    fn validation() {
        let mut s = builtin_scenario("one_modifier").unwrap();
        s.sigma_eps = 0.0;
        assert!(s.validate().is_err());
        let s = builtin_scenario("one_modifier").unwrap().scaled(-1.0);
        assert!(s.validate().is_err());
        let cohort = single_row(60.0, &[]);
        let s = builtin_scenario("one_modifier").unwrap();
        assert!(treatment_effects(&cohort, &s, AgeAnchor::from_spec(&trial()), -0.5).is_err());
        assert_eq!(
            treatment_effects(&cohort, &s, AgeAnchor::from_spec(&trial()), 0.0).unwrap(),
            vec![0.0]
        );
    }
}

//! Study configuration: populations, scenarios, weighting models and the
//! run parameters, plus the resolved estimator pairings.

use thiserror::Error;

use crate::outcome::{scenario_catalog, AgeAnchor, ScenarioSpec};
use crate::population::{builtin_specs, PopulationSpec, Role};
use crate::selection::{builtin_weightings, WeightingSpec};

pub const DEFAULT_REPLICATIONS: usize = 1000;
pub const DEFAULT_MASTER_SEED: u64 = 20_251_016;
/// Effect-scale grid of the sensitivity sweep.
pub const SWEEP_SCALES: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("failed to parse configuration: {0}")]
    Parse(String),
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub populations: Vec<PopulationSpec>,
    pub scenarios: Vec<ScenarioSpec>,
    pub weightings: Vec<WeightingSpec>,
    /// Weighting model whose estimate for the reference population defines bias.
    pub reference_weighting: String,
    pub replications: usize,
    pub master_seed: u64,
    pub effect_scales: Vec<f64>,
    /// Population whose age mean/SD standardizes age in the outcome model;
    /// `None` means the analytic sample.
    pub age_anchor: Option<String>,
    pub max_weight: Option<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            populations: builtin_specs(),
            scenarios: scenario_catalog(),
            weightings: builtin_weightings(),
            reference_weighting: "dem_clin".to_string(),
            replications: DEFAULT_REPLICATIONS,
            master_seed: DEFAULT_MASTER_SEED,
            effect_scales: vec![1.0],
            age_anchor: None,
            max_weight: None,
        }
    }
}

/// One (weighting model, target) estimator that will be computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub weighting: usize,
    pub target: usize,
}

/// An infeasible (weighting model, target) combination and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipRecord {
    pub weighting: String,
    pub target: String,
    pub reason: String,
}

/// A validated configuration with its pairings resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub config: StudyConfig,
    pub analytic: usize,
    pub reference: usize,
    /// Population indices of every weighting target (targets and the reference), config order.
    pub targets: Vec<usize>,
    /// Weighting-major, then target order.
    pub pairings: Vec<Pairing>,
    pub skips: Vec<SkipRecord>,
    /// Index into `pairings` of the reference estimator.
    pub reference_pairing: usize,
    pub anchor: AgeAnchor,
}

impl StudyPlan {
    pub fn analytic_spec(&self) -> &PopulationSpec {
        &self.config.populations[self.analytic]
    }

    pub fn pairing_names(&self, p: &Pairing) -> (&str, &str) {
        (
            &self.config.weightings[p.weighting].name,
            &self.config.populations[p.target].name,
        )
    }
}

fn unique<'a, I: Iterator<Item = &'a str>>(kind: &str, names: I) -> Result<(), ConfigError> {
    let mut seen = std::collections::BTreeSet::new();
    for (i, n) in names.enumerate() {
        if !seen.insert(n) {
            return Err(ConfigError::invalid(
                format!("{kind}[{i}].name"),
                format!("duplicate name `{n}`"),
            ));
        }
    }
    Ok(())
}

impl StudyConfig {
    pub fn population(&self, name: &str) -> Option<&PopulationSpec> {
        self.populations.iter().find(|p| p.name == name)
    }

    /// Validates every invariant and resolves the estimator pairings.
    pub fn plan(&self) -> Result<StudyPlan, ConfigError> {
        if self.replications == 0 {
            return Err(ConfigError::invalid("replications", "must be >= 1"));
        }
        if self.effect_scales.is_empty() {
            return Err(ConfigError::invalid("effect_scales", "must list at least one scale"));
        }
        for (i, k) in self.effect_scales.iter().enumerate() {
            if !(k.is_finite() && *k > 0.0) {
                return Err(ConfigError::invalid(
                    format!("effect_scales[{i}]"),
                    format!("{k} is not a positive scale"),
                ));
            }
        }
        if let Some(cap) = self.max_weight {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(ConfigError::invalid("max_weight", "must be > 0"));
            }
        }
        unique("population", self.populations.iter().map(|p| p.name.as_str()))?;
        unique("scenario", self.scenarios.iter().map(|s| s.name.as_str()))?;
        unique("weighting", self.weightings.iter().map(|w| w.name.as_str()))?;

        for (i, p) in self.populations.iter().enumerate() {
            p.validate()
                .map_err(|e| ConfigError::invalid(format!("population[{i}]"), e.to_string()))?;
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate()
                .map_err(|e| ConfigError::invalid(format!("scenario[{i}]"), e.to_string()))?;
        }
        if self.scenarios.is_empty() {
            return Err(ConfigError::invalid("scenario", "at least one scenario is required"));
        }
        for (i, w) in self.weightings.iter().enumerate() {
            w.validate()
                .map_err(|e| ConfigError::invalid(format!("weighting[{i}]"), e.to_string()))?;
        }

        let with_role = |role: Role| -> Result<usize, ConfigError> {
            let hits: Vec<usize> = (0..self.populations.len())
                .filter(|&i| self.populations[i].role == role)
                .collect();
            match hits.as_slice() {
                [one] => Ok(*one),
                _ => Err(ConfigError::invalid(
                    "population",
                    format!(
                        "exactly one population must have role `{}` (found {})",
                        role.as_str(),
                        hits.len()
                    ),
                )),
            }
        };
        let analytic = with_role(Role::AnalyticSample)?;
        let reference = with_role(Role::Reference)?;
        let trial = &self.populations[analytic];

        for (i, s) in self.scenarios.iter().enumerate() {
            if let Some(c) = s.required_columns().into_iter().find(|c| !trial.is_measured(*c)) {
                return Err(ConfigError::invalid(
                    format!("scenario[{i}]"),
                    format!(
                        "outcome model needs `{c}`, which is unmeasured in analytic sample `{}`",
                        trial.name
                    ),
                ));
            }
        }

        let anchor = match &self.age_anchor {
            None => AgeAnchor::from_spec(trial),
            Some(name) => AgeAnchor::from_spec(
                self.population(name)
                    .ok_or_else(|| ConfigError::invalid("age_anchor", format!("unknown population `{name}`")))?,
            ),
        };

        let targets: Vec<usize> = (0..self.populations.len())
            .filter(|&i| matches!(self.populations[i].role, Role::Target | Role::Reference))
            .collect();

        let mut pairings = Vec::new();
        let mut skips = Vec::new();
        for (wi, w) in self.weightings.iter().enumerate() {
            for &ti in &targets {
                let target = &self.populations[ti];
                let missing: Vec<String> = w
                    .covariates
                    .iter()
                    .filter(|c| !target.is_measured(**c) || !trial.is_measured(**c))
                    .map(|c| c.name().to_string())
                    .collect();
                if missing.is_empty() {
                    pairings.push(Pairing {
                        weighting: wi,
                        target: ti,
                    });
                } else {
                    skips.push(SkipRecord {
                        weighting: w.name.clone(),
                        target: target.name.clone(),
                        reason: format!("unmeasured covariates: {}", missing.join(", ")),
                    });
                }
            }
        }
        let ref_w = self
            .weightings
            .iter()
            .position(|w| w.name == self.reference_weighting)
            .ok_or_else(|| {
                ConfigError::invalid(
                    "reference_weighting",
                    format!("unknown weighting model `{}`", self.reference_weighting),
                )
            })?;
        let reference_pairing = pairings
            .iter()
            .position(|p| p.weighting == ref_w && p.target == reference)
            .ok_or_else(|| {
                ConfigError::invalid(
                    "reference_weighting",
                    format!(
                        "`{}` cannot be fit against reference `{}`",
                        self.reference_weighting, self.populations[reference].name
                    ),
                )
            })?;

        Ok(StudyPlan {
            config: self.clone(),
            analytic,
            reference,
            targets,
            pairings,
            skips,
            reference_pairing,
            anchor,
        })
    }
}

//! TOML configuration files.
//!
//! Every key is optional. An empty file yields the built-in study. Entries in
//! `[[population]]`, `[[scenario]]` and `[[weighting]]` whose name matches a
//! built-in replace it in place (omitted fields keep the built-in value);
//! other entries are appended in file order. Prevalences may be given as the
//! string `"unmeasured"`. Scenario `beta` and `delta` take either one number
//! for every covariate or a table keyed by covariate name.
//!
//! ```toml
//! replications = 200
//! master_seed = 7
//! effect_scales = [0.5, 1.0]
//!
//! [[population]]
//! name = "clinic"
//! role = "target"
//! n_simulated = 20000
//! age_mean = 55.0
//! age_sd = 14.0
//! female = 0.5
//! race_black = 0.2
//! race_other = 0.1
//! hispanic = 0.1
//! hypertension = 0.6
//! heart_failure = "unmeasured"
//! cad = 0.2
//! pad = 0.1
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariate::{parse_covariate_list, Covariate, N_BINARY, N_COVARIATES};
use crate::outcome::{scenario_catalog, ScenarioSpec};
use crate::population::{builtin_specs, PopulationSpec, Prevalence, Role};
use crate::selection::{builtin_weightings, WeightingSpec};
use crate::study::{ConfigError, StudyConfig};

const UNMEASURED_TOKEN: &str = "unmeasured";

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    master_seed: Option<SeedValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effect_scales: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    age_anchor: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_weighting: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    include_builtin_populations: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    include_builtin_scenarios: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    include_builtin_weightings: Option<bool>,
    #[serde(default, rename = "population", skip_serializing_if = "Vec::is_empty")]
    populations: Vec<FilePopulation>,
    #[serde(default, rename = "scenario", skip_serializing_if = "Vec::is_empty")]
    scenarios: Vec<FileScenario>,
    #[serde(default, rename = "weighting", skip_serializing_if = "Vec::is_empty")]
    weightings: Vec<FileWeighting>,
}

/// TOML integers are signed 64-bit, so larger seeds are written as strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SeedValue {
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PrevalenceValue {
    Value(f64),
    Token(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Coefficients {
    Uniform(f64),
    PerCovariate(BTreeMap<String, f64>),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePopulation {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    role: Option<Role>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_simulated: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    age_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    age_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    female: Option<PrevalenceValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    race_black: Option<PrevalenceValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    race_other: Option<PrevalenceValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hispanic: Option<PrevalenceValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hypertension: Option<PrevalenceValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heart_failure: Option<PrevalenceValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cad: Option<PrevalenceValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pad: Option<PrevalenceValue>,
}

impl FilePopulation {
    fn prevalence_fields(&self) -> [&Option<PrevalenceValue>; N_BINARY] {
        [
            &self.female,
            &self.race_black,
            &self.race_other,
            &self.hispanic,
            &self.hypertension,
            &self.heart_failure,
            &self.cad,
            &self.pad,
        ]
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileScenario {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    modifiers: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    treatment_shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effect_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<Coefficients>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<Coefficients>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileWeighting {
    name: String,
    covariates: Vec<String>,
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<StudyConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::invalid(path.display().to_string(), format!("cannot read: {e}")))?;
    parse_config(&text)
}

/// Parses configuration text, applies defaults and validates the result.
pub fn parse_config(text: &str) -> Result<StudyConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let config = resolve(file)?;
    config.plan()?;
    Ok(config)
}

fn resolve(file: FileConfig) -> Result<StudyConfig, ConfigError> {
    let defaults = StudyConfig::default();

    let mut populations = if file.include_builtin_populations.unwrap_or(true) {
        builtin_specs()
    } else {
        Vec::new()
    };
    for (i, entry) in file.populations.into_iter().enumerate() {
        let path = format!("population[{i}]");
        match populations.iter().position(|p| p.name == entry.name) {
            Some(at) => populations[at] = population(entry, Some(&populations[at]), &path)?,
            None => populations.push(population(entry, None, &path)?),
        }
    }

    let mut scenarios = if file.include_builtin_scenarios.unwrap_or(true) {
        scenario_catalog()
    } else {
        Vec::new()
    };
    for (i, entry) in file.scenarios.into_iter().enumerate() {
        let path = format!("scenario[{i}]");
        match scenarios.iter().position(|s| s.name == entry.name) {
            Some(at) => scenarios[at] = scenario(entry, Some(&scenarios[at]), &path)?,
            None => scenarios.push(scenario(entry, None, &path)?),
        }
    }

    let mut weightings = if file.include_builtin_weightings.unwrap_or(true) {
        builtin_weightings()
    } else {
        Vec::new()
    };
    for (i, entry) in file.weightings.into_iter().enumerate() {
        let path = format!("weighting[{i}]");
        let covariates = parse_covariate_list(&entry.covariates)
            .map_err(|e| ConfigError::invalid(format!("{path}.covariates"), e.to_string()))?;
        let spec = WeightingSpec::new(entry.name, &covariates);
        match weightings.iter().position(|w| w.name == spec.name) {
            Some(at) => weightings[at] = spec,
            None => weightings.push(spec),
        }
    }

    let master_seed = match file.master_seed {
        None => defaults.master_seed,
        Some(SeedValue::Int(v)) => {
            u64::try_from(v).map_err(|_| ConfigError::invalid("master_seed", "must be non-negative"))?
        }
        Some(SeedValue::Text(t)) => t
            .trim()
            .parse()
            .map_err(|_| ConfigError::invalid("master_seed", format!("`{t}` is not an unsigned 64-bit integer")))?,
    };

    Ok(StudyConfig {
        populations,
        scenarios,
        weightings,
        reference_weighting: file.reference_weighting.unwrap_or(defaults.reference_weighting),
        replications: file.replications.unwrap_or(defaults.replications),
        master_seed,
        effect_scales: file.effect_scales.unwrap_or(defaults.effect_scales),
        age_anchor: file.age_anchor,
        max_weight: file.max_weight,
    })
}

fn population(entry: FilePopulation, base: Option<&PopulationSpec>, path: &str) -> Result<PopulationSpec, ConfigError> {
    let missing = |field: &str| ConfigError::invalid(format!("{path}.{field}"), "required for a new population");
    let role = entry.role.or(base.map(|b| b.role)).ok_or_else(|| missing("role"))?;
    let n_simulated = entry
        .n_simulated
        .or(base.map(|b| b.n_simulated))
        .ok_or_else(|| missing("n_simulated"))?;
    let age_mean = entry
        .age_mean
        .or(base.map(|b| b.age_mean))
        .ok_or_else(|| missing("age_mean"))?;
    let age_sd = entry
        .age_sd
        .or(base.map(|b| b.age_sd))
        .ok_or_else(|| missing("age_sd"))?;
    let prevalence = {
        let mut out = [Prevalence::Unmeasured; N_BINARY];
        for (i, (field, c)) in entry.prevalence_fields().into_iter().zip(Covariate::BINARY).enumerate() {
            out[i] = match field {
                Some(PrevalenceValue::Value(v)) => Prevalence::Measured(*v),
                Some(PrevalenceValue::Token(t)) if t.eq_ignore_ascii_case(UNMEASURED_TOKEN) => Prevalence::Unmeasured,
                Some(PrevalenceValue::Token(t)) => {
                    return Err(ConfigError::invalid(
                        format!("{path}.{}", c.name()),
                        format!("expected a probability or \"{UNMEASURED_TOKEN}\", found `{t}`"),
                    ))
                }
                None => match base {
                    Some(b) => b.prevalence[i],
                    None => return Err(missing(c.name())),
                },
            };
        }
        out
    };
    let spec = PopulationSpec {
        role,
        n_simulated,
        age_mean,
        age_sd,
        prevalence,
        name: entry.name,
    };
    spec.validate().map_err(|e| ConfigError::invalid(path, e.to_string()))?;
    Ok(spec)
}

fn coefficients(
    value: Option<Coefficients>,
    base: [f64; N_COVARIATES],
    path: &str,
) -> Result<[f64; N_COVARIATES], ConfigError> {
    match value {
        None => Ok(base),
        Some(Coefficients::Uniform(v)) => Ok([v; N_COVARIATES]),
        Some(Coefficients::PerCovariate(map)) => {
            let mut out = base;
            for (name, v) in map {
                let covs = parse_covariate_list(&[name.as_str()])
                    .map_err(|e| ConfigError::invalid(format!("{path}.{name}"), e.to_string()))?;
                for c in covs {
                    out[c.index()] = v;
                }
            }
            Ok(out)
        }
    }
}

fn scenario(entry: FileScenario, base: Option<&ScenarioSpec>, path: &str) -> Result<ScenarioSpec, ConfigError> {
    let modifiers = match (&entry.modifiers, base) {
        (Some(names), _) => {
            parse_covariate_list(names).map_err(|e| ConfigError::invalid(format!("{path}.modifiers"), e.to_string()))?
        }
        (None, Some(b)) => b.modifiers.clone(),
        (None, None) => {
            return Err(ConfigError::invalid(
                format!("{path}.modifiers"),
                "required for a new scenario (use [] for none)",
            ))
        }
    };
    let fallback = ScenarioSpec::with_modifiers(entry.name.clone(), &modifiers);
    let base = base.unwrap_or(&fallback);
    let spec = ScenarioSpec {
        mu0: entry.mu0.unwrap_or(base.mu0),
        treatment_shift: entry.treatment_shift.unwrap_or(base.treatment_shift),
        sigma_eps: entry.sigma_eps.unwrap_or(base.sigma_eps),
        effect_scale: entry.effect_scale.unwrap_or(base.effect_scale),
        beta: coefficients(entry.beta, base.beta, &format!("{path}.beta"))?,
        delta: coefficients(entry.delta, base.delta, &format!("{path}.delta"))?,
        modifiers,
        name: entry.name,
    };
    spec.validate().map_err(|e| ConfigError::invalid(path, e.to_string()))?;
    Ok(spec)
}

fn emit_coefficients(values: &[f64; N_COVARIATES]) -> Coefficients {
    if values.iter().all(|v| *v == values[0]) {
        Coefficients::Uniform(values[0])
    } else {
        Coefficients::PerCovariate(
            Covariate::ALL
                .into_iter()
                .map(|c| (c.name().to_string(), values[c.index()]))
                .collect(),
        )
    }
}

/// Writes a fully resolved configuration: built-ins are disabled and every
/// population, scenario and weighting model is listed explicitly, so the
/// text parses back to an equal configuration.
pub fn to_toml(config: &StudyConfig) -> String {
    let prevalence = |p: Prevalence| {
        Some(match p {
            Prevalence::Measured(v) => PrevalenceValue::Value(v),
            Prevalence::Unmeasured => PrevalenceValue::Token(UNMEASURED_TOKEN.to_string()),
        })
    };
    let file = FileConfig {
        replications: Some(config.replications),
        master_seed: Some(match i64::try_from(config.master_seed) {
            Ok(v) => SeedValue::Int(v),
            Err(_) => SeedValue::Text(config.master_seed.to_string()),
        }),
        effect_scales: Some(config.effect_scales.clone()),
        age_anchor: config.age_anchor.clone(),
        reference_weighting: Some(config.reference_weighting.clone()),
        max_weight: config.max_weight,
        include_builtin_populations: Some(false),
        include_builtin_scenarios: Some(false),
        include_builtin_weightings: Some(false),
        populations: config
            .populations
            .iter()
            .map(|p| FilePopulation {
                name: p.name.clone(),
                role: Some(p.role),
                n_simulated: Some(p.n_simulated),
                age_mean: Some(p.age_mean),
                age_sd: Some(p.age_sd),
                female: prevalence(p.prevalence[0]),
                race_black: prevalence(p.prevalence[1]),
                race_other: prevalence(p.prevalence[2]),
                hispanic: prevalence(p.prevalence[3]),
                hypertension: prevalence(p.prevalence[4]),
                heart_failure: prevalence(p.prevalence[5]),
                cad: prevalence(p.prevalence[6]),
                pad: prevalence(p.prevalence[7]),
            })
            .collect(),
        scenarios: config
            .scenarios
            .iter()
            .map(|s| FileScenario {
                name: s.name.clone(),
                modifiers: Some(s.modifiers.iter().map(|c| c.name().to_string()).collect()),
                mu0: Some(s.mu0),
                treatment_shift: Some(s.treatment_shift),
                sigma_eps: Some(s.sigma_eps),
                effect_scale: Some(s.effect_scale),
                beta: Some(emit_coefficients(&s.beta)),
                delta: Some(emit_coefficients(&s.delta)),
            })
            .collect(),
        weightings: config
            .weightings
            .iter()
            .map(|w| FileWeighting {
                name: w.name.clone(),
                covariates: w.covariates.iter().map(|c| c.name().to_string()).collect(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("configuration serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::builtin_spec;

    #[test]
    fn empty_file_is_the_default_study() {
        let c = parse_config("").unwrap();
        assert_eq!(c, StudyConfig::default());
        assert_eq!(c.populations.len(), 5);
        assert_eq!(c.scenarios.len(), 4);
        assert_eq!(c.weightings.len(), 2);
        assert_eq!(c.replications, 1000);
        assert_eq!(c.effect_scales, vec![1.0]);
    }

    #[test]
    fn zero_replications_rejected() {
        let err = parse_config("replications = 0").unwrap_err();
        assert!(err.to_string().contains("replications"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(parse_config("replicatoins = 5"), Err(ConfigError::Parse(_))));
        let err = parse_config("[[population]]\nname = \"trial\"\nwibble = 1\n").unwrap_err();
        assert!(err.to_string().contains("wibble"), "{err}");
    }

    #[test]
    fn sixth_population_joins_all_feasible_pairings() {
        let text = r#"
            [[population]]
            name = "clinic"
            role = "target"
            n_simulated = 2000
            age_mean = 55.0
            age_sd = 14.0
            female = 0.5
            race_black = 0.2
            race_other = 0.1
            hispanic = 0.1
            hypertension = 0.6
            heart_failure = 0.1
            cad = 0.2
            pad = 0.1
        "#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.populations.len(), 6);
        let plan = c.plan().unwrap();
        let clinic = plan
            .pairings
            .iter()
            .filter(|p| plan.pairing_names(p).1 == "clinic")
            .count();
        assert_eq!(clinic, 2);
    }

    #[test]
    fn override_keeps_unspecified_fields() {
        let c =
            parse_config("[[population]]\nname = \"registry\"\nn_simulated = 1234\nheart_failure = \"unmeasured\"\n")
                .unwrap();
        let reg = c.population("registry").unwrap();
        let builtin = builtin_spec("registry").unwrap();
        assert_eq!(reg.n_simulated, 1234);
        assert_eq!(reg.age_mean, builtin.age_mean);
        assert!(!reg.is_measured(Covariate::HeartFailure));
        assert_eq!(c.populations.iter().position(|p| p.name == "registry"), Some(1));
        // dem_clin can no longer reach the registry
        assert!(c.plan().unwrap().skips.iter().any(|s| s.target == "registry"));
    }

    #[test]
    fn schema_violations_name_the_field() {
        let err = parse_config("[[population]]\nname = \"x\"\nrole = \"target\"\n").unwrap_err();
        assert!(err.to_string().contains("population[0].n_simulated"), "{err}");
        let err = parse_config("[[population]]\nname = \"registry\"\ncad = \"maybe\"\n").unwrap_err();
        assert!(err.to_string().contains("population[0].cad"), "{err}");
        let err = parse_config("[[population]]\nname = \"registry\"\ncad = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("population[0]"), "{err}");
        let err = parse_config("[[scenario]]\nname = \"s\"\nmodifiers = [\"height\"]\n").unwrap_err();
        assert!(err.to_string().contains("scenario[0].modifiers"), "{err}");
        assert!(parse_config("effect_scales = [1.0, -0.5]").is_err());
        assert!(parse_config("master_seed = -3").is_err());
    }

    #[test]
    fn scenario_coefficients_accept_both_forms() {
        let text = r#"
            [[scenario]]
            name = "custom"
            modifiers = ["age", "race"]
            beta = { age = -1.0, hypertension = 0.0 }
            delta = 2.0
            effect_scale = 1.5
        "#;
        let c = parse_config(text).unwrap();
        let s = c.scenarios.iter().find(|s| s.name == "custom").unwrap();
        assert_eq!(
            s.modifiers,
            vec![Covariate::Age, Covariate::RaceBlack, Covariate::RaceOther]
        );
        assert_eq!(s.beta[Covariate::Age.index()], -1.0);
        assert_eq!(s.beta[Covariate::Hypertension.index()], 0.0);
        assert_eq!(s.beta[Covariate::Female.index()], -0.5);
        assert_eq!(s.delta, [2.0; N_COVARIATES]);
        assert_eq!(s.effect_scale, 1.5);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = StudyConfig {
            replications: 17,
            master_seed: u64::MAX - 3,
            effect_scales: vec![0.5, 1.0 / 3.0],
            max_weight: Some(40.0),
            age_anchor: Some("pcornet_disease".into()),
            ..StudyConfig::default()
        };
        c.scenarios[0].beta[Covariate::Pad.index()] = 0.125;
        c.weightings.push(WeightingSpec::new("age_only", &[Covariate::Age]));
        let text = to_toml(&c);
        assert_eq!(parse_config(&text).unwrap(), c);
        assert_eq!(
            parse_config(&to_toml(&StudyConfig::default())).unwrap(),
            StudyConfig::default()
        );
    }

    #[test]
    fn builtins_can_be_dropped() {
        let text = r#"
            include_builtin_scenarios = false
            [[scenario]]
            name = "flat"
            modifiers = []
        "#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.scenarios.len(), 1);
        assert!(parse_config("include_builtin_populations = false").is_err());
    }
}

//! The fixed covariate vocabulary shared by every population, outcome model
//! and selection model.
//!
//! Race is a three-level categorical (white, black, other) carried as two
//! indicator columns with white as the omitted reference level, so the
//! eight study covariates expand to nine model columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Age,
    Female,
    RaceBlack,
    RaceOther,
    Hispanic,
    Hypertension,
    HeartFailure,
    Cad,
    Pad,
}

/// Number of model columns (age plus eight binary indicators).
pub const N_COVARIATES: usize = 9;
/// Number of binary indicator columns.
pub const N_BINARY: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown covariate `{0}`")]
pub struct UnknownCovariate(pub String);

impl Covariate {
    /// Canonical column order.
    pub const ALL: [Covariate; N_COVARIATES] = [
        Covariate::Age,
        Covariate::Female,
        Covariate::RaceBlack,
        Covariate::RaceOther,
        Covariate::Hispanic,
        Covariate::Hypertension,
        Covariate::HeartFailure,
        Covariate::Cad,
        Covariate::Pad,
    ];

    pub const BINARY: [Covariate; N_BINARY] = [
        Covariate::Female,
        Covariate::RaceBlack,
        Covariate::RaceOther,
        Covariate::Hispanic,
        Covariate::Hypertension,
        Covariate::HeartFailure,
        Covariate::Cad,
        Covariate::Pad,
    ];

    pub const DEMOGRAPHIC: [Covariate; 5] = [
        Covariate::Age,
        Covariate::Female,
        Covariate::RaceBlack,
        Covariate::RaceOther,
        Covariate::Hispanic,
    ];

    pub const CLINICAL: [Covariate; 4] = [
        Covariate::Hypertension,
        Covariate::HeartFailure,
        Covariate::Cad,
        Covariate::Pad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Age => "age",
            Covariate::Female => "female",
            Covariate::RaceBlack => "race_black",
            Covariate::RaceOther => "race_other",
            Covariate::Hispanic => "hispanic",
            Covariate::Hypertension => "hypertension",
            Covariate::HeartFailure => "heart_failure",
            Covariate::Cad => "cad",
            Covariate::Pad => "pad",
        }
    }

    /// Human-readable row label used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Covariate::Age => "Age (years)",
            Covariate::Female => "Sex (female)",
            Covariate::RaceBlack => "Race: Black",
            Covariate::RaceOther => "Race: Other",
            Covariate::Hispanic => "Hispanic Ethnicity",
            Covariate::Hypertension => "Hypertension",
            Covariate::HeartFailure => "Heart failure",
            Covariate::Cad => "Coronary artery disease",
            Covariate::Pad => "Peripheral artery disease",
        }
    }

    /// Position in [`Covariate::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Position among the binary columns, `None` for age.
    pub fn binary_index(self) -> Option<usize> {
        match self {
            Covariate::Age => None,
            other => Some(other as usize - 1),
        }
    }

    pub fn is_binary(self) -> bool {
        self != Covariate::Age
    }

    pub fn is_clinical(self) -> bool {
        Covariate::CLINICAL.contains(&self)
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Covariate {
    type Err = UnknownCovariate;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let c = match s.trim().to_ascii_lowercase().as_str() {
            "age" => Covariate::Age,
            "female" | "sex" => Covariate::Female,
            "race_black" | "black" => Covariate::RaceBlack,
            "race_other" => Covariate::RaceOther,
            "hispanic" | "hispanic_ethnicity" => Covariate::Hispanic,
            "hypertension" => Covariate::Hypertension,
            "heart_failure" => Covariate::HeartFailure,
            "cad" | "coronary_artery_disease" => Covariate::Cad,
            "pad" | "peripheral_artery_disease" => Covariate::Pad,
            _ => return Err(UnknownCovariate(s.to_string())),
        };
        Ok(c)
    }
}

/// Parses a covariate list, expanding `race` into both race indicators.
/// The result is sorted in canonical order with duplicates removed.
pub fn parse_covariate_list<S: AsRef<str>>(names: &[S]) -> Result<Vec<Covariate>, UnknownCovariate> {
    let mut out = Vec::with_capacity(names.len() + 1);
    for name in names {
        let name = name.as_ref();
        if name.trim().eq_ignore_ascii_case("race") {
            out.push(Covariate::RaceBlack);
            out.push(Covariate::RaceOther);
        } else {
            out.push(name.parse()?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

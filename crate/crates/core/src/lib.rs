//! Simulation engine for studying how inverse-probability-of-sampling
//! weighted (IPSW) estimates of a population average treatment effect shift
//! as the target population changes.
//!
//! The pieces, bottom up: [`population`] specifications and cohort sampling,
//! the linear potential-outcome model in [`outcome`], standardized mean
//! differences in [`balance`], the logistic selection model in [`selection`]
//! (fit by the solver in [`irls`]), the estimators in [`estimate`], and the
//! replication engine in [`montecarlo`]. [`pipeline`] ties them together and
//! writes the artifacts rendered by [`report`].

use std::path::PathBuf;

use thiserror::Error;

pub mod balance;
pub mod config;
pub mod covariate;
pub mod estimate;
pub mod irls;
pub mod montecarlo;
pub mod outcome;
pub mod pipeline;
pub mod population;
pub mod report;
pub mod seed;
pub mod selection;
pub mod stats;
pub mod study;

pub use config::{load_config, parse_config, to_toml};
pub use montecarlo::{effect_scale_sweep, run_monte_carlo, run_replication, RunOptions};
pub use pipeline::{run_balance, run_study};
pub use study::{ConfigError, StudyConfig};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] montecarlo::SimulationError),
    #[error("balance diagnostics failed: {0}")]
    Balance(#[from] balance::BalanceError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for numerical
    /// failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Simulation(montecarlo::SimulationError::Config(_)) => 2,
            Error::Simulation(montecarlo::SimulationError::UnknownScenario(_)) => 2,
            Error::Simulation(_) | Error::Balance(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

//! Declarative scenarios: trap → couplings → kink model and/or full spin
//! simulation → result tables.

use std::fmt;

use thiserror::Error;

pub mod compare;
pub mod scenario;
pub mod table;

pub use compare::{compare_backends, split_backends, DivergenceEntry, DivergenceReport};
pub use scenario::{
    run_scenario, scenario_couplings, Backend, CouplingSource, ScanMode, ScenarioConfig,
    ScenarioKind, SpectroscopySettings,
};
pub use table::{OutputFormat, Provenance, ResultTable};

/// Pipeline stage that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Trap,
    Coupling,
    Kink,
    FullSpin,
    Spectroscopy,
    Compare,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Trap => "trap",
            Stage::Coupling => "coupling",
            Stage::Kink => "kink",
            Stage::FullSpin => "full-spin",
            Stage::Spectroscopy => "spectroscopy",
            Stage::Compare => "compare",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage} stage: {message}")]
    Numerical { stage: Stage, message: String },
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// Maps any error to a numerical failure at `stage`.
    pub fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> ExperimentError {
        move |e| ExperimentError::Numerical {
            stage,
            message: e.to_string(),
        }
    }

    /// 2 for configuration errors, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Numerical { .. } => 3,
            ExperimentError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

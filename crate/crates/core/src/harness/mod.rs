//! Scenario description, the dumbbell experiments and CSV output.

mod experiments;
mod output;
mod scenario;

use std::path::PathBuf;

use thiserror::Error;

pub use experiments::{
    normalized_dispersion, run_fairness_experiment, run_gain_experiment, spearman, DispersionRow,
    DispersionSummary, DispersionTable, ExperimentResult, GainRow, GainSummary, GainTable,
    SweepSettings,
};
pub use output::{write_dispersion_table, write_flow_stats, write_gain_table};
pub use scenario::{build_dumbbell, DumbbellParams, FlowSpec, LinkSpec, QueueKind, Scenario, ScenarioRun};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Tcp(#[from] crate::tcp::TcpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

//! Experiment runner: wires topology, traffic and leader agents, writes a run
//! directory and derives plot data from it.

mod config;
mod metrics;
mod plots;
mod run;

pub use config::{FeedbackConfig, LearningConfig, RunConfig};
pub use metrics::{read_metrics, read_transitions, MetricsRecord, TransitionRecord};
pub use plots::{emit_plots, window_medians, PlotFiles};
pub use run::{compare_algorithms, run_experiment, AgentManifest, ComparisonRow, Manifest, RunSummary};

use thiserror::Error;

use crate::agent::AgentError;
use crate::netstate::NetStateError;
use crate::topology::TopologyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    NetState(#[from] NetStateError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Metrics { path: String, message: String },
    #[error("seed {seed}: traffic traces differ between algorithms")]
    TraceMismatch { seed: u64 },
    #[error("no seeds given")]
    NoSeeds,
}

impl HarnessError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::NoSeeds => 2,
            HarnessError::Topology(_) => 3,
            _ => 1,
        }
    }

    fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}

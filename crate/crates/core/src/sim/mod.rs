//! Closed-loop simulator: scenarios, ground truth, synthetic sensors and the driving loop.

use std::path::PathBuf;

use thiserror::Error;

pub mod metrics;
pub mod render;
pub mod route_state;
pub mod run;
pub mod scenario;
pub mod sensors;
pub mod vehicle;
pub mod world;

pub use metrics::{parse_key_values, RunMetrics};
pub use run::{replay_logs, run_scenario, Mode, PlanKind, PlanRecord, ReplaySummary, RunOptions, RunOutput};
pub use scenario::{Expectation, ScenarioSpec};

#[derive(Debug, Error)]
pub enum SimError {
    /// `line` is 1-based; 0 when the problem is not tied to a line.
    #[error("{}: {msg}", location(file, *line))]
    Config { file: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Route(#[from] crate::route::RouteError),
    #[error(transparent)]
    Mapper(#[from] crate::mapper::MapperError),
    #[error(transparent)]
    Perception(#[from] crate::perception::PerceptionError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("render: {0}")]
    Render(String),
}

impl SimError {
    /// Whether the error stems from bad input files rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(self, SimError::Config { .. } | SimError::Usage(_) | SimError::Route(_))
    }
}

fn location(file: &std::path::Path, line: usize) -> String {
    if line == 0 {
        file.display().to_string()
    } else {
        format!("{}:{line}", file.display())
    }
}

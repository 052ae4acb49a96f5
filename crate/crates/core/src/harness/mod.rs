//! Experiment orchestration: configuration, multi-seed execution, archives,
//! analysis tables and figures.

mod analysis;
mod archive;
mod config;
mod plot;
mod run;

use std::path::{Path, PathBuf};

pub use analysis::{analyze, MethodSummary, Summary, TestRow, SUMMARY_DIR};
pub use archive::{EpisodeRecord, RoundSummary, RunArchive, SeedRun};
pub use config::{DiagnosticsConfig, ExperimentConfig, Preset, ProtocolConfig};
pub use plot::{plot, PlotKind};
pub use run::{run_experiment, run_seed, sweep, SweepPoint};

pub const BASELINE_METHOD: &str = "reset_all";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed archive: {0}")]
    Archive(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Numerical(_) => 2,
            HarnessError::Io { .. } | HarnessError::Archive(_) => 3,
        }
    }
}

impl From<crate::ppo::PpoError> for HarnessError {
    fn from(e: crate::ppo::PpoError) -> Self {
        if e.is_numerical() {
            HarnessError::Numerical(e.to_string())
        } else {
            HarnessError::Config(e.to_string())
        }
    }
}

impl From<crate::nn::NnError> for HarnessError {
    fn from(e: crate::nn::NnError) -> Self {
        crate::ppo::PpoError::from(e).into()
    }
}

impl From<crate::shift::ShiftError> for HarnessError {
    fn from(e: crate::shift::ShiftError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

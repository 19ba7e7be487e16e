//! Experiment orchestration: configuration, campaigns, persistence and
//! reports.

pub mod campaign;
pub mod config;
pub mod report;
pub mod store;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::energy::EnergyError;
use crate::power::ProbeError;

pub use campaign::{campaign, CampaignOptions, CampaignSummary, HostInfo};
pub use config::{load_config, ConfigCheck, ConfigError, ExperimentConfig};
pub use report::{analyze, emit, siti_summary, AnalysisSettings, EmitFormats, Report};
pub use store::{RecordKey, RecordStore, RunRecord, RunStatus, StoreError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Energy(EnergyError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("another measurement holds the lock {0}")]
    LockHeld(PathBuf),
    #[error("{0} already holds records; pass --resume to continue")]
    ExistingRecords(PathBuf),
    #[error("host fingerprint mismatch: expected `{expected}`, found `{found}` (use --force-merge)")]
    FingerprintMismatch { expected: String, found: String },
    #[error("no idle baseline at {0}; run measure-idle first")]
    BaselineMissing(PathBuf),
    #[error("no replay trace in {dir} for {cell}")]
    ReplayTraceMissing { dir: PathBuf, cell: String },
    #[error("anchor codec `{0}` has no successful records")]
    MissingAnchor(String),
    #[error("report has no rows")]
    EmptyReport,
    #[error("analysis failed: {0}")]
    Analysis(String),
}

impl BenchError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> BenchError + '_ {
        move |source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Config(ConfigError::Validation(_)) => "validation_error",
            BenchError::Config(_) => "config_error",
            BenchError::Store(_) => "store_error",
            BenchError::Probe(ProbeError::PermissionDenied { .. }) => "permission_denied",
            BenchError::Probe(_) => "probe_error",
            BenchError::Energy(EnergyError::StaleBaseline(_)) => "stale_baseline",
            BenchError::Energy(_) => "energy_error",
            BenchError::Io { .. } => "io_error",
            BenchError::LockHeld(_) => "lock_held",
            BenchError::ExistingRecords(_) => "existing_records",
            BenchError::FingerprintMismatch { .. } => "fingerprint_mismatch",
            BenchError::BaselineMissing(_) => "baseline_missing",
            BenchError::ReplayTraceMissing { .. } => "replay_trace_missing",
            BenchError::MissingAnchor(_) => "missing_anchor",
            BenchError::EmptyReport => "empty_report",
            BenchError::Analysis(_) => "analysis_error",
        }
    }
}

//! The JSON record every batch command writes, whatever the outcome.
//! Its schema is `docs/manifest.schema.json`.

use std::path::{Path, PathBuf};

use flipfree::admm::{DiagnosticsRecord, ExitStatus, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIter,
    Stalled,
    ValidationError,
    Error,
}

impl RunStatus {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Converged => 0,
            Self::Error => 1,
            Self::MaxIter => 2,
            Self::Stalled => 3,
            Self::ValidationError => 4,
        }
    }
}

impl From<ExitStatus> for RunStatus {
    fn from(s: ExitStatus) -> Self {
        match s {
            ExitStatus::Converged => Self::Converged,
            ExitStatus::MaxIter => Self::MaxIter,
            ExitStatus::Stalled => Self::Stalled,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub mesh: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handles: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_boundary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `null` when the final map still has inverted elements.
    pub final_energy: Option<f64>,
    pub flips: usize,
    pub initial_flips: usize,
    pub iterations: usize,
    pub e_prim: f64,
    pub e_dual: f64,
    pub wall_ms: f64,
}

impl Metrics {
    pub fn from_history(history: &[DiagnosticsRecord], wall_ms: f64) -> Self {
        let first = history.first().expect("history is never empty");
        let last = history.last().expect("history is never empty");
        Self {
            final_energy: last.energy.is_finite().then_some(last.energy),
            flips: last.flips,
            initial_flips: first.flips,
            iterations: last.iter,
            e_prim: last.e_prim,
            e_dual: last.e_dual,
            wall_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub inputs: Inputs,
    /// Effective solver configuration; pass it back with `--config` to rerun.
    pub config: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    pub status: RunStatus,
    pub exit_code: u8,
    pub metrics: Option<Metrics>,
    pub output: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Inputs) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            inputs,
            config: None,
            init: None,
            status: RunStatus::Error,
            exit_code: RunStatus::Error.exit_code(),
            metrics: None,
            output: None,
            log: None,
            error: None,
        }
    }

    pub fn set_status(&mut self, status: RunStatus) {
        self.status = status;
        self.exit_code = status.exit_code();
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }
}

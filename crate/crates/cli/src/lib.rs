//! Library side of the `nsed` binary: file formats, subcommand bodies and
//! the Monte Carlo driver. `main.rs` only parses flags and maps errors to
//! exit codes.

pub mod commands;
pub mod simulate;

use std::path::{Path, PathBuf};

use nsed_core::agents::{AgentBinding, AgentError};
use nsed_core::broker::BrokerError;
use nsed_core::orchestrator::OrchestratorError;
use nsed_core::telemetry::TelemetryError;
use nsed_core::thermo::ThermoError;
use nsed_core::ConsensusStrategy;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_AGENT_FAILURE: i32 = 4;
pub const EXIT_SLA_TIMEOUT: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Broker(BrokerError::Infeasible { .. } | BrokerError::CondorcetFail { .. }) => {
                EXIT_INFEASIBLE
            }
            Self::Orchestrator(OrchestratorError::AgentFailure { .. }) => EXIT_AGENT_FAILURE,
            Self::Orchestrator(OrchestratorError::Timeout { .. }) => EXIT_SLA_TIMEOUT,
            _ => EXIT_CONFIG,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.into(),
        source,
    })
}

/// Pool files are JSON arrays of bindings.
pub fn read_pool(path: &Path) -> Result<Vec<AgentBinding>, CliError> {
    let pool: Vec<AgentBinding> = read_json(path)?;
    if pool.is_empty() {
        return Err(CliError::Config(format!(
            "{}: pool is empty",
            path.display()
        )));
    }
    for b in &pool {
        b.profile
            .validate()
            .map_err(|e| CliError::Config(format!("{}: {}: {e}", path.display(), b.profile.id)))?;
    }
    Ok(pool)
}

/// Builds a strategy from its flag name and parameters.
pub fn strategy_from(name: &str, alpha: f64, gamma_w: f64) -> Result<ConsensusStrategy, CliError> {
    let s = match name {
        "live" | "dictator" => ConsensusStrategy::Live,
        "history_max" | "history-max" => ConsensusStrategy::HistoryMax,
        "linear" => ConsensusStrategy::Linear { alpha },
        "exponential" => ConsensusStrategy::Exponential { gamma_w },
        other => {
            return Err(CliError::Config(format!(
                "unknown strategy {other:?}; expected live, history_max, linear or exponential"
            )))
        }
    };
    if !s.is_valid() {
        return Err(CliError::Config(format!(
            "invalid strategy parameters: {s:?}"
        )));
    }
    Ok(s)
}

pub(crate) fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io {
            path: PathBuf::from("<runtime>"),
            source,
        })
}

//! Reproducible experiments over unfolded GNNs: dataset generation,
//! training, ablations, objective tables, cascade checks, ξ sweeps, and
//! gradient verification. Every command is a pure function of its JSON
//! configuration and seed.

pub mod app;
pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;
pub mod theorem;

use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ugnn_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 configuration, 3 numerical divergence, 4 verification failure,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use ugnn_core::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Verification(_) => 4,
            Self::Core(E::Divergence { .. }) => 3,
            Self::Core(
                E::InvalidConfig(_)
                | E::Parse { .. }
                | E::MissingFile(_)
                | E::InvalidData(_)
                | E::InvalidGraph(_)
                | E::EmptyGraph
                | E::Json(_),
            ) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

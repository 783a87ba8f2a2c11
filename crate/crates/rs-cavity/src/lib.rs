//! Simulation runner, report formats and command-line interface on top of
//! `rs-cavity-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod experiment;
pub mod report;

pub use experiment::{config_hash, run_experiment, ReplicationSummary};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] rs_cavity_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// 1 for solver failures, 2 for invalid input.
    pub fn exit_code(&self) -> u8 {
        use rs_cavity_core::Error as C;
        match self {
            Error::Core(C::InvalidDimension(_) | C::InvalidArgument(_) | C::OutOfDomain(_)) => 2,
            Error::Core(_) => 1,
            _ => 2,
        }
    }
}

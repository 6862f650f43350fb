//! Monte-Carlo BER/FER evaluation, SNR sweeps and experiment presets.

mod config;
mod eval;
mod sweep;

pub use config::FlatConfig;
pub use eval::{evaluate, Decoder, EvalReport, ModelDecoder, StopRule};
pub use sweep::{sweep, ResultRow, SweepSpec, CSV_HEADER, PAPER_CODES};

use crate::channel::ChannelError;
use crate::codes::CodesError;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("config parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codes(#[from] CodesError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("progress file: {0}")]
    Json(#[from] serde_json::Error),
}

//! Command implementations behind the `repseg` binary. Each command is a
//! plain function so tests and experiment scripts can drive it directly.

pub mod config;
pub mod evaluate;
pub mod generate;
pub mod sweep;
pub mod train;
pub mod velocity;

use repseg_core::train::TrainError;
use thiserror::Error;

pub use config::{Overrides, Preset, RunConfig};

/// Bad flag combination or value the parser could not catch.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Input that does not match its schema or the other inputs.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct DataError(pub String);

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(TrainError::NonFinite { .. }) = cause.downcast_ref::<TrainError>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_DATA
}

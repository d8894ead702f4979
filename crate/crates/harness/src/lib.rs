//! Command-line harness around `rpu-core`: configuration, the experiments,
//! parallel sweeps, and pass/fail checks.

// Validation uses `!(x > 0.0)` style checks so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod experiments;

use rpu_core::dataset::DatasetError;
use rpu_core::network::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] DatasetError),
    #[error("training error: {0}")]
    Train(#[from] TrainError),
}

impl HarnessError {
    /// 1 for bad configuration, 2 for anything touching files.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Train(_) => 1,
            HarnessError::Io(_) | HarnessError::Dataset(_) => 2,
        }
    }
}

pub const EXIT_CHECK_FAILED: i32 = 3;

//! Process exit codes, one per failure class.

use std::fmt;

/// A gradient check exceeded its threshold.
pub const GRADCHECK: u8 = 1;
/// An input directory holds no PNG images.
pub const EMPTY_INPUT: u8 = 2;
/// A prerequisite stage has not been trained.
pub const MISSING_STAGE: u8 = 3;
/// Unknown config key or invalid value.
pub const INVALID_CONFIG: u8 = 4;
/// Checkpoint and requested scale disagree.
pub const SCALE_MISMATCH: u8 = 5;
/// Evaluation skipped at least one image.
pub const SKIPPED: u8 = 6;
/// Every input file failed to process.
pub const ALL_FAILED: u8 = 7;
/// An input image violates a size requirement.
pub const INVALID_INPUT: u8 = 8;
/// Unexpected runtime failure (I/O, corrupt checkpoint, ...).
pub const RUNTIME: u8 = 9;
/// Malformed command line.
pub const USAGE: u8 = 64;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(INVALID_CONFIG, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<wdn::Error> for Failure {
    fn from(e: wdn::Error) -> Self {
        let code = match &e {
            wdn::Error::MissingStage { .. } => MISSING_STAGE,
            wdn::Error::Config(_) => INVALID_CONFIG,
            wdn::Error::Contract { .. } | wdn::Error::InputTooSmall { .. } => INVALID_INPUT,
            _ => RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

impl From<wdn::training::CheckpointError> for Failure {
    fn from(e: wdn::training::CheckpointError) -> Self {
        Self::new(RUNTIME, e.to_string())
    }
}

//! Library side of the `mixf` command: config files, the training pipeline,
//! data-reduction sweeps, the gradient-check suite and a synthetic task.

pub mod config;
pub mod gradsuite;
pub mod run;
pub mod synthetic;

use std::fmt;

/// Exit status for a successful command.
pub const EXIT_OK: u8 = 0;
/// A check ran and failed (gradient check, non-finite training, failed sweep cells).
pub const EXIT_VERIFY: u8 = 1;
/// Bad arguments, config or input files.
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Verification(String),
    Core(mixf::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Core(e) => match e.root() {
                mixf::Error::NonFinite(_) | mixf::Error::GradCheck(_) => EXIT_VERIFY,
                _ => EXIT_INPUT,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Verification(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mixf::Error> for CliError {
    fn from(e: mixf::Error) -> Self {
        CliError::Core(e)
    }
}

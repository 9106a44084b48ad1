//! Process exit codes. Each failure class gets its own code so scripts can
//! tell bad inputs from I/O trouble from a failed check.

use std::process::ExitCode;

pub const SUCCESS: u8 = 0;
/// Anything not covered below.
pub const FAILURE: u8 = 1;
/// Command-line parse errors.
pub const USAGE: u8 = 2;
/// Malformed config, spec, volume or label data.
pub const INVALID_INPUT: u8 = 3;
/// Missing input files or unwritable outputs.
pub const IO: u8 = 4;
/// A gradient check exceeded its tolerance.
pub const CHECK_FAILED: u8 = 5;
/// Training hit a non-finite loss.
pub const NON_FINITE_LOSS: u8 = 6;
/// Unreadable or inconsistent checkpoint.
pub const CHECKPOINT: u8 = 7;

pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<uafuse::Error>() {
            use uafuse::Error as E;
            return match e {
                E::Io { .. } => IO,
                E::Checkpoint(_) => CHECKPOINT,
                E::NonFiniteLoss { .. } => NON_FINITE_LOSS,
                _ => INVALID_INPUT,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return INVALID_INPUT;
        }
    }
    FAILURE
}

pub fn to_exit(code: u8) -> ExitCode {
    ExitCode::from(code)
}

//! Driver behind the `seqdyn` binary.

pub mod commands;
pub mod config;
pub mod csv_out;
pub mod report;
pub mod repro;

use seqdyn::Error;

/// Process exit status for a failed command: 2 when training produced
/// non-finite values, 1 for configuration and every other error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } | Error::NonFinite(_) => 2,
        _ => 1,
    }
}

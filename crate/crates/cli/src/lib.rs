//! Config-driven front end for the alphasde library.
//!
//! The binary reads a JSON experiment config, runs it, and writes CSV
//! artifacts plus a manifest. Exit codes: 0 success, 1 validation error
//! (bad config, bad parameters), 2 numerical failure (divergence,
//! non-convergence, or a failing check in `report-all`).

pub mod config;
pub mod experiments;
pub mod report;

use alphasde::error::Error;

pub use config::RunConfig;
pub use experiments::{run, Overrides, RunOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Map a library error onto the process exit contract.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter { .. } | Error::Domain(_) | Error::Build(_) | Error::Io(_) => {
            EXIT_VALIDATION
        }
        Error::Evaluation { .. } | Error::Divergence { .. } | Error::NonConvergence { .. } => {
            EXIT_NUMERICAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::invalid;

    #[test]
    fn exit_codes_split_validation_from_numerics() {
        assert_eq!(
            exit_code_for(&invalid("alpha", "out of range")),
            EXIT_VALIDATION
        );
        assert_eq!(
            exit_code_for(&Error::NonConvergence {
                residual: 1.0,
                iterations: 5
            }),
            EXIT_NUMERICAL
        );
        assert_eq!(
            exit_code_for(&Error::Divergence { step: 3, index: 0 }),
            EXIT_NUMERICAL
        );
    }
}

//! Library side of the `lpcft` command: argument definitions, run-directory
//! artifacts (dataset index, metrics CSV, summaries, manifests, plots) and
//! the command implementations.

pub mod args;
pub mod commands;
pub mod dataset;
pub mod manifest;
pub mod plot;
pub mod records;

pub use args::Cli;
pub use commands::run;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for invalid arguments, configs or missing inputs.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures while running (I/O, divergence, decode errors).
pub const EXIT_RUNTIME: i32 = 3;

/// A problem with what the user asked for rather than with running it.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(lpcft::Error::Config(_) | lpcft::Error::InvalidArgument(_)) = cause.downcast_ref() {
            return EXIT_USAGE;
        }
    }
    EXIT_RUNTIME
}

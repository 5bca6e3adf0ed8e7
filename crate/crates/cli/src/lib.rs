//! Command-line pipeline and HTTP service for scene affordance prediction.

pub mod cli;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod serve;

/// Bad flags or configuration values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<affordance::Error>() {
            if e.is_divergence() {
                return EXIT_DIVERGED;
            }
        }
    }
    EXIT_DATA
}

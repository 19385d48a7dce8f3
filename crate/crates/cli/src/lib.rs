//! Experiment runner for inspection and maintenance planning: named presets,
//! run directories with tidy CSV outputs, and model interchange.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod presets;

use std::fmt;

/// A problem with the user's configuration or arguments (exit status 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

/// Maps an error to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<im_core::Error>() {
        Some(
            im_core::Error::InvalidParameter(_)
            | im_core::Error::StateBudget { .. }
            | im_core::Error::Parse { .. }
            | im_core::Error::UnsupportedAction(_),
        ) => EXIT_CONFIG,
        _ if err.downcast_ref::<std::io::Error>().is_some() => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

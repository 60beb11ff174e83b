//! Subcommands of the `solver` binary.

pub mod check;
pub mod compare;
pub mod dump;
pub mod manifest;
pub mod run;

/// Environment variable naming the default output directory of `solver run`.
pub const OUTPUT_DIR_ENV: &str = "FPK_OUTPUT_DIR";

pub type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

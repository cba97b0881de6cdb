//! Orchestration behind the `sifsr` command: scene directories, run
//! manifests, the benchmark harness and one entry point per subcommand.

pub mod benchmark;
pub mod commands;
pub mod dataset;
pub mod exit;
pub mod manifest;

pub use exit::{exit_code, UsageError};

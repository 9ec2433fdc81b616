//! Batch front-end for the MRAC simulation engine: scenario files, run and
//! compare commands, CSV/JSON artifacts.

pub mod commands;
pub mod error;
pub mod scenario;

pub use commands::{cmd_compare, cmd_run, compare_scenario, run_scenario, Overrides};
pub use error::CliError;
pub use scenario::ScenarioFile;

//! Scenario configuration, presets and report rendering for the `backtail`
//! command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod presets;
pub mod report;

pub use config::{emit, load_config, load_str, Scenario, ScenarioFile};
pub use error::CliError;
pub use report::Format;

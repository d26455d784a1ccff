//! Scenario runner for parameterized Wasserstein gradient flows: JSON
//! configs, named presets, run artifacts, plot data and oracle tools.

pub mod check;
pub mod config;
pub mod error;
pub mod oracle;
pub mod plotdata;
pub mod presets;
pub mod scenario;

pub use config::{load_config, parse_config, RunConfig};
pub use error::CliError;
pub use presets::preset;
pub use scenario::{run_scenario, ScenarioRun};

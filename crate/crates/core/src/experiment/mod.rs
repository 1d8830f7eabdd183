//! Configured parameter sweeps and their CSV output.

pub mod config;
pub mod output;
pub mod run;
pub mod schemes;

pub use config::{defaults_text, load_config, parse_config, ConfigError, ExperimentConfig, ExperimentName, Scheme};
pub use output::{read_csv, write_csv, write_results, OutputError};
pub use run::{run, DofFit, ResultRow, RunOutput};

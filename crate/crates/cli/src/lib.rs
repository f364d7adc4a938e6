//! Experiment runner: configs and presets in, reproducible report bundles out.

pub mod config;
pub mod error;
pub mod manifest;
pub mod presets;
pub mod run;
pub mod suite;
pub mod verify;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, ErrorRecord};
pub use manifest::RunManifest;
pub use run::{execute, resolve_output_root, OUTPUT_ROOT_ENV};

//! Experiment runner on top of `ncps_core`: config parsing, seeded grid runs
//! with CSV/SVG/checkpoint artifacts, summary comparison and dataset export.

pub mod compare;
pub mod config;
pub mod dump;
pub mod error;
pub mod run;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::ConfigError;

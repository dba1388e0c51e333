//! Configuration, experiment driver and output files of the command-line
//! tool.

pub mod config;
pub mod experiment;
pub mod fields;
pub mod output;

pub use config::{ManifestError, Overrides, Preset, RunManifest};
pub use experiment::{
    run_experiment, run_single, ExperimentError, ExperimentReport, RunRecord, RunStatus,
};

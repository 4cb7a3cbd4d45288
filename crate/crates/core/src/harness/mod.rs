//! Config-driven replicated experiments, file I/O and reproductions.

pub mod config;
pub mod files;
pub mod manifest;
pub mod reproduce;
pub mod runner;

pub use config::{ExperimentConfig, LdSpec, Overlap, PanelKind, PanelSpec};
pub use files::{estimate_from_files, EstimateFlags, InputFiles};
pub use manifest::Manifest;
pub use reproduce::{reproduce, ReproduceOptions, Scale, Target};
pub use runner::{run_experiment, simulate, ReplicateRow, SummaryRow, SummaryTable};

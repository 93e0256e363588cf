//! Experiment harness: configuration, seeded stages with manifests,
//! multi-seed batches, transfer runs and reports.

pub mod batch;
pub mod cli;
pub mod config;
mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod transfer;

pub use config::{ExperimentConfig, Profile};
pub use error::{exit, HarnessError, Result};
pub use pipeline::Pipeline;

//! File formats, experiment harness and command line around `pdrfe-core`.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod io;
pub mod plan;
pub mod report;

pub use error::{LabError, Result};
pub use harness::{run_ablation, run_experiment, AblationReport, ExperimentReport};
pub use plan::{ExperimentPlan, Variant};

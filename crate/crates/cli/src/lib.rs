//! Command-line front end for the reachable-set and intensity-of-attraction
//! engines: run configuration, artifact emission, reproducibility manifests,
//! and the regression suite over the published example systems.

pub mod artifacts;
pub mod config;
pub mod runner;
pub mod suite;

pub use config::{ConfigError, RunConfig};
pub use runner::{run, RunError};
pub use suite::{run_all, run_selected, CriterionOutcome};

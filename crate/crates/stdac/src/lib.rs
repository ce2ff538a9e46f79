//! File formats, the experiment harness and output emitters around
//! [`stdac_core`]: IDX ingestion, `key = value` experiment configs,
//! per-epoch CSV logs with summaries and checkpoints, SVG training curves
//! and PGM image grids.

pub mod checkpoint_file;
pub mod config;
pub mod curves;
mod error;
pub mod experiment;
pub mod idx;
pub mod results;
pub mod viz;

pub use config::{Dataset, ExperimentConfig, Split};
pub use error::{Error, Result};
pub use experiment::{load_dataset, run_experiment, ExperimentOutput};
pub use stdac_core;

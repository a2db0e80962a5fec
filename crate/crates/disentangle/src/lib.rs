//! File formats, dataset ingestion, plots and the command implementations
//! behind the `disentangle` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
mod container;
pub mod dataset_io;
pub mod error;
pub mod metrics;
pub mod plot;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DataSource, Overrides, RunConfig};
pub use error::{AppError, Result};

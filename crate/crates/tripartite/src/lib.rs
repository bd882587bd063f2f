//! File formats, dataset loading, experiment configuration and the
//! command-line experiments built on `tripartite-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datasets;
pub mod error;
pub mod output;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use error::AppError;

//! File formats, configuration, metrics and the experiment pipelines.

pub mod config;
pub mod experiment;
pub mod formats;
pub mod metrics;

pub use config::Config;
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport};
pub use formats::{read_image, read_sinogram, write_image, write_sinogram};
pub use metrics::{metrics, MetricReport};

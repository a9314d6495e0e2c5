//! MNIST experiments: data loading, configs, training runs, error sweeps
//! and reports.

pub mod analysis;
pub mod config;
pub mod metrics;
pub mod mnist;
pub mod report;
pub mod train;

pub use analysis::{analyze_error, monte_carlo_bias, BiasReport, ErrorReport, ErrorSummary};
pub use config::{DataConfig, TrainConfig};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use mnist::{load_mnist, load_splits, Dataset, MnistError};
pub use report::report;
pub use train::{run_label, train, train_on, TrainOutcome};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Mnist(#[from] MnistError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{label} diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { label: String, epoch: usize, step: usize, loss: f32 },
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("analysis: {0}")]
    Analysis(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

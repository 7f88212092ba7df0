//! Convolutional and Fire-Module variational autoencoders for windowed
//! multivariate time series: a small reverse-mode tensor engine, the two model
//! builders, training and scoring, checkpoints, data preparation, metrics and a
//! latency benchmark.

pub mod autograd;
pub mod bench;
pub mod checkpoint;
pub mod container;
pub mod data;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod vae;
pub mod zoo;

pub use checkpoint::{load_checkpoint, save_checkpoint, serialized_size, CheckpointError};
pub use data::{DataError, RawSeries, WindowedDataset};
pub use metrics::MetricError;
pub use model::VaeModel;
pub use tensor::{Real, Tensor, TensorError};
pub use vae::{GaussianParams, TrainConfig, VaeError};
pub use zoo::{ArchitectureSpec, ModelError, ModelKind};

//! Age regression from chest radiographs with a densely connected CNN.
//!
//! The crate carries its own small tensor and reverse-mode autodiff engine,
//! the network, data loading, SGD training, metrics, checkpoints and
//! gradient saliency.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod real;
pub mod saliency;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Graph, NodeId};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use network::{GraphModel, Network, NetworkSpec, Preset};
pub use real::{Precision, Real};
pub use tensor::Tensor;
pub use trainer::{train, EpochStats, Objective, TrainConfig, TrainOutcome};

//! Early leak prediction for pipeline telemetry: windowed PCA features, a
//! temporal convolutional feature extractor and a Kolmogorov-Arnold
//! classification head, plus the metrics used to score it.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data_gen;
pub mod error;
pub mod frame;
pub mod kan;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod tcn;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use frame::TimeSeriesFrame;
pub use metrics::{AunpMode, MetricsReport};
pub use model::{HeadKind, MktcnModel, ModelConfig};
pub use preprocess::PreprocessConfig;
pub use tensor::{Rng, Tensor};
pub use train::TrainConfig;

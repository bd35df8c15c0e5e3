//! Convolutional placement regressor built from explicit layer primitives.

pub mod adam;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use model::{CnnModel, Layer, Network, MODEL_MAGIC};
pub use tensor::{Scalar, Tensor};
pub use train::{evaluate_mae, train, train_from, History, Precision, TrainConfig};

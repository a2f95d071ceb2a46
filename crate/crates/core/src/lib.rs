//! A from-scratch convolutional network engine for six-class pedestrian
//! age/gender classification: tensors and layers with hand-written
//! gradients, a residual and a compact architecture, SGD/Adam training with
//! early stopping, a COCO-to-crops data pipeline and evaluation metrics.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use data::DemographicClass;
pub use error::{Error, Result};
pub use model::{Model, ModelSummary};
pub use tensor::{Init, Padding, Scalar, Tensor};
pub use zoo::{registry_lookup, ModelConfig};

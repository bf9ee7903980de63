//! From-scratch dense tensor math, reverse-mode differentiation and the
//! transition-model learner.

pub mod dataset;
pub mod network;
pub mod tape;
pub mod tensor;
pub mod train;

pub use dataset::{Dataset, DatasetMeta};
pub use network::{ForwardMode, Layer, Network, Standardization};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainHistory, TrainOutcome};

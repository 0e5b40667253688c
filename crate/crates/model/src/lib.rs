//! Trainable iterative backward reasoner: encoder, prediction heads,
//! teacher-forced training, greedy/beam decoding and latency benchmarking.

pub mod bench;
pub mod config;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod infer;
pub mod layers;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod trace;
pub mod vocab;

pub use config::{InferConfig, LearningRates, LossTerm, LossWeights, ModelConfig, Pooling, TrainConfig};
pub use error::{Error, Result};
pub use model::Model;

//! Attention encoder–decoder generation model: training, perplexity,
//! sentence embeddings and greedy / stochastic-greedy / sampled decoding.

mod model;
pub mod sampling;
mod train;

pub use model::{DecodeResult, DecoderState, Encoded, GenerationModel, ModelConfig, Responder, CHECKPOINT_KIND};
pub use sampling::{DecodeStrategy, DEFAULT_TOP_K};
pub use train::{perplexity, train, TrainConfig, TrainReport};

//! Iterative data distillation for dialogue response specificity.
//!
//! A pool of attention-based encoder-decoder models is trained on
//! progressively distilled corpora ([`distill`]); a hierarchical classifier
//! ([`evaluator`]) separates human from machine responses; a REINFORCE
//! selector ([`policy`]) learns which pool model to decode each input with.

pub mod checkpoint;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod evaluator;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod seed;
pub mod seq2seq;

pub use error::{Error, Result};

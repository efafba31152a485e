//! Minimal differentiable substrate: parameters, the layer kinds used by the
//! generation model, evaluator and policy, hand-written reverse-mode
//! backward passes, SGD with norm clipping, and a finite-difference checker.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod param;
pub mod seq;

pub use gradcheck::grad_check;
pub use layers::{Attention, Embedding, LayerKind, LayerSpec, Linear, LstmCache, LstmCell, SoftmaxProjection};
pub use optim::{grad_norm, sgd_step, HalvingSchedule};
pub use param::{Param, Parameterized};

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.1;

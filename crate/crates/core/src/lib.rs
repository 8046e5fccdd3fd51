//! Class-discriminative channel scoring, label-hierarchy learning,
//! hierarchical pruning plans and discriminant-subspace distillation losses
//! over exported CNN activations.

pub mod cli;
pub mod dca;
pub mod error;
pub mod hierarchy;
pub mod json;
pub mod metrics;
pub mod planner;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, ErrorClass, Result};

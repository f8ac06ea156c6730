//! Dual-reweighting domain-generalization training framework.
//!
//! The crate trains a liveness classifier on several source domains while a
//! domain discriminator adversarially probes its features. Two reweighting
//! mechanisms shape the optimization: per-sample sigmoid weights that damp
//! domain-biased samples in the main losses, and per-channel softmax weights
//! that self-distill domain-irrelevant feature channels on a periodic
//! schedule. A synthetic multi-domain live/spoof benchmark makes the whole
//! pipeline runnable and testable on a CPU in minutes.

pub mod container;
pub mod error;
pub mod evalkit;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod syndata;
pub mod trainer;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod tensor;

pub use error::{DrdgError, Result};
pub use tensor::Tensor;

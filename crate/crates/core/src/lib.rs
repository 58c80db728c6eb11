//! Robust structured pruning of spiking convolutional networks by
//! cooperative coevolution.
//!
//! A trained spiking CNN is pruned filter-by-filter: each convolution layer
//! gets its own small evolutionary algorithm that searches over that layer's
//! filter mask, scoring candidates by clean accuracy, accuracy on a shared
//! set of PGD adversarial examples, and FLOPs. Layer winners are combined,
//! the smaller network is physically rebuilt and adversarially fine-tuned,
//! and the process repeats.

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evolution;
pub mod pruning;
pub mod rng;
pub mod snn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Minimal spiking CNN engine: LIF dynamics over convolution and dense
//! layers, direct input coding, and surrogate-gradient BPTT.

mod engine;
mod layer;
mod lif;
mod loss;
mod network;
mod ops;

pub use engine::{
    accuracy, argmax_rows, backward, forward, logits, Backward, ForwardTrace, Gradients, NetView, Want,
};
pub use layer::{Architecture, LayerGeom, LayerSpec, LifConfig, Reset};
pub use lif::{lif_step, Mode};
pub use loss::{cross_entropy, cross_entropy_per_example, log_softmax, loss_backward, softmax, LossSpec, Reduction};
pub use network::{init_network, LayerParams, Network};

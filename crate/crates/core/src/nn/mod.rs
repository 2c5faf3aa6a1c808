//! Convolutional network layers, losses, topologies and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod network;
pub mod spec;

pub use layers::{Layer, Mode};
pub use loss::{cross_entropy_loss, l2_penalty, one_hot, softmax, squared_error_loss};
pub use network::{Network, ParamSlot};
pub use spec::{LayerSpec, LossKind, NetworkSpec};

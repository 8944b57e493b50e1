//! Minimal reverse-mode differentiation engine and layer zoo: enough to
//! train a small CNN and to differentiate scalar objectives with respect to
//! input images.

pub mod checkpoint;
mod fft;
mod graph;
mod net;
mod optim;
mod tensor;

pub use graph::{softmax_row, AffineCoeffs, Graph, NodeId};
pub use net::{Forward, Gradients, Layer, Network, NetworkBuilder, Padding};
pub use optim::{Adam, AdamState, Sgd};
pub use tensor::Tensor;

pub(crate) use fft::fft2_forward;

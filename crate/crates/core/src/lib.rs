//! Desk-scale toolkit for building low-cost CNN ensembles from a shared
//! parent (snapshot checkpoints and anti-random prune-and-tune children) and
//! quantifying their representational diversity with feature visualizations,
//! saliency maps, perceptual hashes and classical output-diversity metrics.

pub mod data;
pub mod engine;
pub mod error;
pub mod forge;
pub mod imgio;
pub mod lens;
pub mod metrics;
pub mod npy;
pub mod phash;
pub mod pipeline;
pub mod schedules;
pub mod seeds;

pub use engine::{Forward, Gradients, Graph, Layer, Network, Padding, Tensor};
pub use error::{Error, Result};

//! Graph-Laplacian smoothing regularizer for binary segmentation, together
//! with a small encoder/decoder convolutional network trained by hand-written
//! backpropagation, a fundus-style patch pipeline and evaluation tooling.
//!
//! The regularizer splits each label patch into a foreground and a background
//! region, samples a node set from each, connects every pair of sampled nodes
//! with the label-similarity weight `1 - |t_j - t_k|` and penalizes
//! `S = y_F' L_F y_F + y_B' L_B y_B` where `L = D - A` is the region Laplacian.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph_smoothing;
pub mod inference;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod raster;
pub mod real;
pub mod seed;
pub mod segnet;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor4;

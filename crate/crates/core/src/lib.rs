//! Graph signal recovery: three-layer node classifiers (MLP, node2vec, GCN,
//! GraphSAGE), Gaussian-Bernoulli RBM denoisers for their hidden
//! representations, test-time noise operators and accuracy-grid evaluation.
//!
//! Builds without `std`; only `alloc` is required.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod distortion;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod matrix;
pub mod n2v;
pub mod nn;
pub mod pipeline;
pub mod random;
pub mod rbm;
pub mod tsne;

pub use error::{Error, Result};
pub use graph::{Graph, NodeSet, Split, SplitMasks};
pub use matrix::{CsrMatrix, DenseMatrix};
pub use nn::{Arch, DnnModel, Tap};
pub use rbm::{GbRbm, Scaler};

//! Structured multi-output kernel regression.
//!
//! The crate predicts a stacked output vector (landmark coordinates followed by
//! three Cobb angles) from image descriptors with a kernel model of the form
//! `ŷ = S β K(x)`, where `S` is a learned output-structure matrix regularized by
//! an ℓ2,1 norm, `β` holds kernel coefficients and `K` is a nonnegative
//! combination of Gaussian base kernels whose weights are learned by kernel
//! target alignment. Training alternates an IRWLS solve for `β` with an
//! iterative closed-form update of `S`, under an ε-insensitive quadratic loss
//! and a graph-Laplacian penalty built over the training outputs.
//!
//! Around the estimator sit a synthetic spine generator with a Cobb-angle
//! measurement oracle, a renderer and HOG extractor, evaluation metrics, and the
//! file formats and commands used by the `s2vr` binary.

pub mod error;
pub mod features;
pub mod format;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod qp;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use model::{Mode, S2vrModel};
pub use solver::{SolverState, TrainConfig};

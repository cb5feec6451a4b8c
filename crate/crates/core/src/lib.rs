//! Coding rate reduction (MCR²) and its variational reformulation (V-MCR²).
//!
//! The crate provides the objectives and their analytic gradients, a small
//! MLP featurizer with manual backpropagation, the alternating
//! proximal-ascent trainer with periodic latching, a nearest-subspace
//! classifier, dataset generation/loading, and the run orchestration used by
//! the `vmcr2` command-line tool.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the 64-bit instantiation used by the trainers and the CLI.

// NaN-rejecting checks are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classifier;
pub mod coding_rate;
pub mod data;
pub mod error;
pub mod featurizer;
pub mod numerics;
pub mod rng;
pub mod run;
pub mod scalar;
pub mod trainer;
pub mod variational;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used throughout training and the command-line tool.
pub type Real = f64;
pub type Matrix = ndarray::Array2<Real>;
pub type FeatureMatrix = coding_rate::FeatureMatrix<Real>;
pub type MembershipMatrix = coding_rate::MembershipMatrix<Real>;
pub type CodingRateParams = coding_rate::CodingRateParams<Real>;
pub type VariationalState = variational::VariationalState<Real>;
pub type MlpParams = featurizer::MlpParams<Real>;
pub type SubspaceModel = classifier::SubspaceModel<Real>;
pub type Dataset = data::Dataset<Real>;

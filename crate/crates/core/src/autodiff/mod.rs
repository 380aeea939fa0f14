//! Reverse-mode automatic differentiation over dense tensors.
//!
//! The module provides the primitives the networks and losses are built
//! from: matrix products, 1-D/2-D (transposed) convolutions, componentwise
//! nonlinearities, reductions, batch normalization and the log-distance op
//! used by the entropy estimator. Broadcasting is restricted to bias adds,
//! per-channel affines and scalar ops; every other shape must match exactly.

pub mod check;
pub mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use scalar::{mm_nn, mm_nt, mm_tn, Scalar};
pub use tape::{ElemKind, Id, ReduceKind, Tape, DIST_FLOOR, SELU_ALPHA, SELU_LAMBDA};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

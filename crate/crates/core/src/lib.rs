//! Neural parametrization and Bayesian conditioning of binary channelized
//! subsurface images.
//!
//! The crate trains a convolutional generator of 64×64 (or 32×32) facies
//! images adversarially, then trains a second fully connected *inference
//! network* so that the composition `G ∘ I` samples realizations conditioned
//! on point observations. A quantitative assessment pipeline (multipoint
//! pattern histograms, ANODI-style inconsistency/diversity scores,
//! multidimensional scaling, discriminator-score histograms, memorization
//! and interpolation checks) rounds out the toolkit.
//!
//! Data-parallel inner loops (batched convolutions, k-NN distances, pairwise
//! histogram divergences) run on rayon when the default `parallel` feature is
//! enabled and fall back to sequential loops otherwise; both paths produce
//! bit-identical results.

pub mod assess;
pub mod autodiff;
pub mod error;
pub mod gan;
pub mod conditioner;
pub mod data;
pub mod layers;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};

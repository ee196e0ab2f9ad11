//! Probabilistic multi-label contrastive learning at desk scale.
//!
//! An encoder maps inputs to the unit hypersphere; a mixture density head
//! turns each embedding into an isotropic Gaussian mixture whose components
//! correspond to classes. Training minimizes the mixture negative
//! log-likelihood plus a contrastive loss in which positives are the views
//! whose labels overlap the anchor's by at least a threshold, weighted by
//! that overlap, and mixture similarity is the closed-form correlation
//! coefficient. The head is then discarded and a linear classifier is fit
//! on the frozen encoder with an asymmetric loss.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod grad;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod overlap;
pub mod rng;

pub use error::{Error, Result};

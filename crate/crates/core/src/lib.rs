//! Variational dual-tree approximation of random-walk transition matrices
//! under Bregman divergences.
//!
//! The pipeline is: load or generate data ([`dataset`], [`synthetic`]),
//! pick a divergence ([`divergence`]), build an anchor tree ([`tree`]),
//! choose a block partition over it ([`partition`]), fit one transition
//! parameter per block ([`variational`]) and run label propagation with
//! the resulting operator ([`propagation`]). [`experiment`] strings these
//! together for accuracy sweeps and scaling runs; [`model`] persists fitted
//! models.

pub mod dataset;
pub mod divergence;
pub mod error;
pub mod experiment;
pub mod model;
pub mod partition;
pub mod propagation;
pub mod sparse;
pub mod synthetic;
pub mod tree;
pub mod variational;

pub use error::{Error, Result};

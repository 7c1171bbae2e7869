//! Conditional log-likelihood vectors and the statistics built on them.
//!
//! A model is represented by its log-likelihoods `log p(y_s | x_s)` over a
//! fixed set of prompt-response pairs. This crate turns those vectors into
//! KL-divergence and mutual-information estimates, prompt-shift geometry and
//! 2-D model maps. The [`oracle`] module provides small enumerable
//! conditional models whose KL and MI are known exactly, so every estimator
//! here can be checked against ground truth.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the scorer
//! client and the command line live in the `llmap` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bootstrap;
pub mod divergence;
mod error;
pub mod linalg;
pub mod mapping;
pub mod matrix;
pub mod oracle;
pub mod pca;
pub mod promptshift;
pub mod rng;
pub mod stats;
pub mod tsne;

pub use error::{Error, Result, Violation};
pub use matrix::{
    LogLikelihoodMatrix, Mode, ModelVector, PairSet, TextPair, VectorKind, ClipInfo,
};

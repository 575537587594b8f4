//! Deterministic federated-learning simulator with layer-wise adaptive
//! local differential privacy.
//!
//! The crate is organized around the client/server protocol: [`tensor`] and
//! [`rng`] provide the numeric and deterministic-randomness substrate,
//! [`model`] the feed-forward classifier and SGD, [`dp`] the layer-wise
//! privacy mechanism and its baselines, [`partition`] the non-IID data
//! splits, [`fl`] the synchronous training loop, [`accountant`] the
//! sequential privacy accounting and convergence-bound calculator, and
//! [`config`]/[`experiment`] the benchmark harness behind the CLI.

pub mod accountant;
pub mod config;
pub mod data;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod model;
pub mod partition;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

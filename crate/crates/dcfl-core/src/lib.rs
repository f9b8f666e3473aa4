//! Deterministic single-process simulator for complementarity-driven
//! federated learning with dataset condensation.
//!
//! The crate provides the numeric kernel (dense MLPs over f64 tensors),
//! dataset handling and non-IID partitioners, CKA/EMD similarity metrics,
//! differentiable augmentation, distribution-matching condensation, and the
//! federated protocol engine with its selection, filtering, and aggregation
//! rules. Every run is a pure function of its configuration and seed.

pub mod augment;
pub mod condense;
pub mod config;
pub mod data;
pub mod error;
pub mod fed;
pub mod harness;
pub mod idx;
pub mod nn;
pub mod partition;
pub mod similarity;
pub mod streams;
pub mod study;
pub mod tensor;

pub use error::{Error, Result};

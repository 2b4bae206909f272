//! Adversarial bi-regressor networks for unsupervised domain-adaptive regression.
//!
//! A feature generator feeds two structurally identical regressor heads whose
//! disagreement on unlabeled target data is maximized through a differentiable
//! soft-similarity, while a conditional discriminator aligns two intermediate
//! domains built by mixing source and target inputs. The crate also ships
//! synthetic domain-shifted benchmarks (an RF fingerprint localization
//! simulator and a small image regression task), lite baselines, and
//! evaluation/report tooling.

pub mod augment;
pub mod baselines;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};

//! Kernel-space analysis of zeroth-order optimization.
//!
//! A zeroth-order SGD step only probes the loss along random directions, and
//! its effect on a model's per-class confidence factors through a projected
//! empirical tangent kernel: the usual `JᵀJ` Gram matrix with both Jacobians
//! pushed through the random perturbation subspace first. This crate builds
//! every piece of that account at desk scale:
//!
//! - [`linalg`]: dense matrices and small-scale spectral routines;
//! - [`rng`]: deterministic splittable streams, Gaussian/Rademacher
//!   perturbations, and the 1/√P-normalized projection matrix;
//! - [`model`]: a small MLP with exact per-logit Jacobians;
//! - [`kernel`]: first-order and projected kernels plus their discrepancy;
//! - [`dynamics`]: the one-step log-belief decomposition `−η·A·K·G`;
//! - [`optim`]: SPSA central differences, ZO-SGD, and trajectory records;
//! - [`metrics`]: relative Frobenius error, CKA error, spectral distance;
//! - [`bounds`]: projection budgets, preservation checks, moment oracles;
//! - [`data`]: synthetic blobs and IDX ingestion;
//! - [`experiment`]: reproducible CSV/JSON experiment runners.

pub mod bounds;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};

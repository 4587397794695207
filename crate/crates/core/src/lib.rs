//! Kernel ridge regression on linearly predicted latent features.
//!
//! The crate covers the pieces needed to study regression with latent
//! factors: kernels and Gram matrices, KRR with squared and general convex
//! losses, a factor-model simulator with PCA factor prediction, kernel
//! complexity and critical-radius analysis, risk metrics, and a seeded Monte
//! Carlo experiment runner.

pub mod complexity;
pub mod error;
pub mod experiment;
pub mod factor;
pub mod io;
pub mod kernels;
pub mod krr;
pub mod linalg;
pub mod riskeval;
pub mod rng;

pub use error::{Error, Result};
pub use kernels::{GramMatrix, KernelSpec, PointSet};
pub use krr::{KrrModel, LossSpec};

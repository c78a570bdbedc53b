//! Kernel-based genomic risk prediction built around the neural tangent
//! kernel (NTK).
//!
//! The crate covers the full pipeline:
//!
//! - [`genodata`]: genotype/phenotype/covariate containers, standardization,
//!   synthetic genotype generation with a Gaussian-copula LD model.
//! - [`kernels`]: the genomic relationship matrix (GRM) and the analytic
//!   infinite-width ReLU NTK recursion.
//! - [`ntk`]: wide-MLP initialization, exact parameter gradients, and the
//!   blockwise empirical NTK with width-convergence diagnostics.
//! - [`minque`]: MINQUE variance-component estimation for linear mixed models.
//! - [`predict`]: BLUP and kernel ridge regression predictors, their
//!   equivalence check, and the gradient-flow training-dynamics predictor.
//! - [`nn`]: a conventionally trained MLP baseline (manual backprop + Adam).
//! - [`simlab`]: synthetic phenotype scenarios, replicate campaigns, and
//!   evaluation metrics.
//! - [`io`]: CSV/TSV matrix input/output and kernel metadata sidecars.

pub mod error;
pub mod genodata;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod minque;
pub mod nn;
pub mod ntk;
pub mod predict;
pub mod simlab;
pub mod util;

pub use error::{Error, Result};

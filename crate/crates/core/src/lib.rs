//! Simulation and verification toolkit for the universality of empirical
//! spectral distributions of sample covariance matrices `n^-1 Y Y^T`.
//!
//! The crate generates the column processes (i.i.d., m-dependent martingale
//! differences, banded linear processes) together with their conditionally
//! Gaussian companions, computes spectra and Stieltjes transforms, and checks
//! the quadratic-form moment inequalities and resolvent lemmas that drive the
//! universality argument by Monte Carlo or direct dense linear algebra.

// Negated comparisons are used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod ensembles;
mod error;
pub mod experiment;
pub mod lemmas;
pub mod linalg;
pub mod mp_law;
mod quadrature;
pub mod rng;
pub mod spectra;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;

//! Covariance estimation from randomly shifted, noisy observations via the
//! power spectrum and trispectrum.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod signal_model;
pub mod step1;
pub mod step2;

pub use error::{MrfaError, Result};

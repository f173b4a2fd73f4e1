//! Numerical toolkit for squeezing-based amplification of quantum
//! harmonic oscillator dynamics: truncated Fock-space operators, pulse
//! sequence protocols, open-system (Lindblad) propagation, and a
//! sideband tomography fitting pipeline for synthetic data.

// Link the system BLAS for ndarray's matrix products.
use blas_src as _;
use openblas_src as _;

pub mod error;
pub mod fock;
pub mod linalg;
pub mod open_system;
pub mod protocols;
pub mod seeds;
pub mod tomography;

pub use error::{Error, Result};

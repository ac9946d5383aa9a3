//! Floquet dual-unitary circuits: eigenstate correlations, operator
//! entanglement, scrambling diagnostics and folded transfer matrices.
//!
//! Sites are 0-based. In a state index, site 0 is the most significant bit.
//! One Floquet period applies layer 1 (bonds `(0,1), (2,3), ...`) and then
//! layer 2 (bonds `(1,2), ..., (L-1,0)`).

pub mod circuits;
pub mod config;
pub mod eigencorr;
mod error;
pub mod geometry;
mod kernels;
pub mod opent;
pub mod replica;
pub mod scan;
pub mod scrambling;
pub mod seed;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

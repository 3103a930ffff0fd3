//! Estimation and certification tools for the lower spectral radius of
//! finite sets of invertible matrices.

pub mod access;
pub mod barabanov;
pub mod domination;
pub mod error;
pub mod estimators;
pub mod io;
pub mod matset;
pub mod probe;
pub mod projective;

pub use error::{Error, Result};
pub use matset::{Matrix, MatrixSet, Word};

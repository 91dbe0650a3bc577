pub mod carleson;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod measures;
pub mod quadrature;
pub mod toeplitz;
pub mod weights;

pub use error::{Error, Result};
pub use num_complex::Complex64;

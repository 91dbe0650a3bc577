use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{name}` = {value} is out of range: {expected}")]
    Parameter {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("point {point} lies outside the truncated disc |z| <= {r_max}")]
    Domain { point: Complex64, r_max: f64 },

    #[error("empty sample band: no sampled point has modulus above {threshold}")]
    EmptyBand { threshold: f64 },

    #[error("quadrature did not converge: relative change {change:e} under panel refinement ({what})")]
    Precision { what: String, change: f64 },

    #[error(
        "kernel series truncated at degree {n_basis}: tail bound {tail:e} of leading term at |z w| = {modulus}; increase n_basis"
    )]
    Truncation {
        n_basis: usize,
        modulus: f64,
        tail: f64,
    },

    #[error("lattice point budget of {budget} exhausted; uncovered witness {witness}")]
    Capacity { budget: usize, witness: Complex64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numerical consistency check failed: {0}")]
    Consistency(String),

    #[error("weight `{0}` is not radial; kernel computations need a radial weight")]
    NotRadial(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Parameter {
            name,
            value,
            expected,
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Precision { .. }
                | Error::Truncation { .. }
                | Error::Capacity { .. }
                | Error::Consistency(_)
        )
    }
}

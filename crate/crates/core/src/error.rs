use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Validation(String),

    #[error("covariance {index} is {rows}x{cols}, expected {p}x{p}")]
    DimensionMismatch {
        index: usize,
        rows: usize,
        cols: usize,
        p: usize,
    },

    #[error(
        "covariance is not positive semi-definite: most negative eigenvalue {min_eigenvalue:e}"
    )]
    NotPsd { min_eigenvalue: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix I + sum c_b g_b C_b at z = {z}")]
    Singular { z: Complex64 },

    #[error("fixed point did not converge at z = {z} after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        z: Complex64,
        iterations: usize,
        residual: f64,
    },

    #[error("consistency check failed at z = {z}: {detail}")]
    Consistency { z: Complex64, detail: String },

    #[error("z = {z} is too close to the support: {detail}")]
    NearSupport { z: Complex64, detail: String },

    #[error("at grid index {index}: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("quadrature did not reach tolerance {tolerance:e} (estimate {estimate:e})")]
    Quadrature { tolerance: f64, estimate: f64 },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_index(self, index: usize) -> Self {
        Error::GridPoint {
            index,
            source: Box::new(self),
        }
    }

    /// True for failures caused by numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::NonConvergence { .. }
            | Error::Consistency { .. }
            | Error::NearSupport { .. }
            | Error::Quadrature { .. }
            | Error::Linalg(_) => true,
            Error::GridPoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("disorder realization covers {realization} cells but the lattice has {lattice}")]
    SizeMismatch { lattice: usize, realization: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "spectral bounds did not converge after {iterations} Lanczos steps \
         (last change {last_change:.3e}, tolerance {tolerance:.3e})"
    )]
    BoundsNotConverged {
        iterations: usize,
        last_change: f64,
        tolerance: f64,
    },

    #[error("dimension {dim} exceeds the dense eigensolver cap of {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("finite-difference metric unstable: step halving changed g from {coarse} to {fine}")]
    Precision { coarse: f64, fine: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("quadrature did not converge: estimated error {error_estimate:.3e} on {integral:.6e}")]
    Quadrature { integral: f64, error_estimate: f64 },
}

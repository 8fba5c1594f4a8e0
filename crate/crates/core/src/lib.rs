//! Transport in diluted flat-band chains: lattice construction, Chebyshev
//! resolvent numerics, compact localized states and closed-form predictions.

pub mod analytic;
pub mod ensemble;
pub mod error;
pub mod exactdiag;
pub mod flatband;
pub mod lattice;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};

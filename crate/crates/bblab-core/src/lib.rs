//! Exact additive-combinatorics calculus over F_p^n: Fourier analysis on
//! dense sets, sumset and fiber operators on product spaces, subspace
//! certificates, bilinear variety search, and the fibered iteration driver
//! that ties them together.

pub mod bivariety;
pub mod error;
pub mod fourier;
pub mod gfspace;
pub mod scheme;
pub mod setcalc;
pub mod structure;
mod transform;

pub use error::{Error, Result};
pub use gfspace::{
    digit_string, enumerate_subspaces, enumerate_subspaces_within, gaussian_binomial,
    parse_digit_string, AffineDualMap, AffineSubspace, FieldParams, MatFp, PointVec, Subspace,
};

/// Default ceiling for enumeration-heavy routines; override per call or via
/// the CLI's --cap flag.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Library version, embedded in CLI reports for provenance.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

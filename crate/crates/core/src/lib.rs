//! Lattice-regularised φ⁴ measures: free-field covariances and counterterms,
//! Monte Carlo estimation of correlations, a quadrature oracle for tiny
//! lattices, skeleton-inequality bounds on the susceptibility, and the
//! log-Sobolev criterion integral built on top of them.

pub mod criterion;
pub mod error;
pub mod free_field;
pub mod lattice;
pub mod numerics;
pub mod oracle;
pub mod sampler;
pub mod skeleton;

pub use error::{Error, Result};
pub use lattice::{build_lattice, convolve, lp_norm, Field, LatticeSpec};

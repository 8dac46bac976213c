//! Estimation of the time-averaged autocorrelation of observables on
//! Hamiltonian systems, together with lower bounds built from conserved
//! quantities.
//!
//! The toolkit has three layers:
//!
//! * phase-space machinery: a small expression language ([`expr`]), symplectic
//!   integration of Hamilton's equations ([`dynamics`]) and Metropolis
//!   sampling of the Gibbs measure `e^{-beta H} dm / Z(beta)` ([`gibbs`]);
//! * two independent estimators of the time average `C(A)` of the
//!   autocorrelation function ([`correlation`]);
//! * the polynomial lower bounds on `C(A)` assembled from monomials in the
//!   conserved quantities, their saturation diagnostics, and the
//!   partition-refined bounds driven by flow-invariant labelers ([`bounds`]),
//!   plus level-set averaging for ergodically regular systems ([`regular`]).
//!
//! Everything is deterministic given the RNG seeds recorded in the outputs.

pub mod bounds;
pub mod correlation;
pub mod dynamics;
pub mod expr;
pub mod gibbs;
pub mod regular;
pub mod stats;

mod warning;

pub use warning::Warning;

//! Pathwise random periodic and stationary solutions of semilinear
//! hyperbolic SDEs of the form
//!
//! ```text
//! du = -A u dt + F(t, u) dt + B0(t) dW(t)
//! ```
//!
//! with symmetric hyperbolic `A` (no eigenvalue in a band around zero),
//! time-periodic drift `F` and diffusion `B0`, and a two-sided Wiener
//! process `W`. Solutions are constructed per noise path by a Picard
//! iteration on a coupled forward/backward integral map: stable modes are
//! integrated forward from the infinite past, unstable modes backward from
//! the infinite future, both truncated at an exponentially certified
//! horizon. An independent forward integrator verifies the semiflow and
//! periodicity identities of the computed solutions.
//!
//! Module map:
//! - [`spectral`]: symmetric eigendecomposition, stable/unstable splitting,
//!   exact semigroup action.
//! - [`wiener`]: commensurate time grids, counter-based two-sided Wiener
//!   increments, exact grid-level shifts.
//! - [`convolution`]: truncated stochastic convolution of the noise,
//!   its Malliavin derivative, stationary covariance oracle.
//! - [`drift`]: drift families, dissipativity constants, a priori solution
//!   bounds, radial cutoff.
//! - [`solver`]: the fixed-point map, contraction diagnostics, per-path and
//!   ensemble Picard solves.
//! - [`verifier`]: exponential-Euler forward integration and identity
//!   checks (semiflow, periodicity, stationarity, moment aggregation).
//! - [`exec`]: data-parallel path scheduling with a sequential fallback.

// Negated float comparisons (`!(x > 0.0)`) are deliberate NaN-rejecting
// guards; the positive form would silently accept NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convolution;
pub mod drift;
pub mod exec;
pub mod solver;
pub mod spectral;
pub mod verifier;
pub mod wiener;

pub use convolution::{DiffusionSpec, GridFunction};
pub use drift::{BoundsLedger, DriftSpec};
pub use solver::{CutoffMode, SolveReport, SolverConfig};
pub use spectral::HyperbolicSplitting;
pub use verifier::IdentityReport;
pub use wiener::{PathView, TimeGrid, WienerPath};

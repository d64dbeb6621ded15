//! Running regularized primal-dual gradient methods for time-varying
//! nonconvex optimization.
//!
//! The crate tracks KKT trajectories of problems
//!
//! ```text
//!   min_x c(x, t)   s.t.  f^c(x, t) + f^nc(x, t) <= 0,  x in X(t)
//! ```
//!
//! with one projected primal-dual gradient update per time slot, computes
//! reference trajectories from the fixed-point form of the KKT conditions,
//! evaluates the contraction/feasibility constants and tracking-error
//! bounds along a reference trajectory, tunes the dual regularization
//! optimally, and validates the continuous-time (catching) limit of the
//! scheme against its differential inclusion.
//!
//! Everything is generic over the scalar type via [`scalar::Scalar`]
//! (f32 or f64); the `*64` aliases below fix f64, which is what the CLI
//! and the test suites use.

pub mod catching;
pub mod certificates;
pub mod error;
pub mod kkt;
pub mod primal_dual;
pub mod problem;
pub mod scalar;
pub mod sets;
pub mod tracker;
pub mod tuner;

pub use error::{Error, Result};
pub use primal_dual::{eta_norm, EtaNorm, PrimalDual};
pub use sets::{normal_cone_residual, ConvexSet, TimeFn};

/// f64 concrete aliases for the main domain types.
pub type PrimalDual64 = PrimalDual<f64>;
pub type EtaNorm64 = EtaNorm<f64>;
pub type ConvexSet64 = ConvexSet<f64>;
pub type ProblemOracle64 = problem::ProblemOracle<f64>;
pub type TimeGrid64 = problem::TimeGrid<f64>;
pub type Scenario64 = problem::scenario::Scenario<f64>;
pub type TrackerParams64 = tracker::TrackerParams<f64>;
pub type Trajectory64 = tracker::Trajectory<f64>;
pub type CertificateInputs64 = certificates::CertificateInputs<f64>;
pub type Constants64 = certificates::Constants<f64>;
pub type TunerProblem64 = tuner::TunerProblem<f64>;
pub type PiecewiseLinearPath64 = catching::PiecewiseLinearPath<f64>;

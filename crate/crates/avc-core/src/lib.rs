//! Capacity computation and achievability simulation for discrete
//! arbitrarily varying channels whose encoder sees the jamming state
//! through a noisy observation channel.
//!
//! The crate is organized around five layers:
//!
//! * [`prob`] — finite-alphabet distributions, channels, joint laws,
//!   entropy/mutual information, empirical types and typicality.
//! * [`strategy`] — Shannon-strategy tables and assembly of the full
//!   joint law over `(S, Z, U, X, Y)`.
//! * [`solver`] — the nested min-max-min capacity solver, special-case
//!   solvers, and an exhaustive brute-force oracle.
//! * [`sim`] — Monte Carlo realization of the binned-codebook coding
//!   scheme against pluggable jamming adversaries.
//! * [`derand`] — reduction of shared randomness to a sampled code
//!   ensemble and the concatenated stochastic-encoder construction.

pub mod derand;
pub mod error;
pub mod prob;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod strategy;

pub use error::AvcError;
pub use prob::{Alphabet, Channel, Dist, EmpiricalType, JointDist};
pub use solver::CapacityReport;
pub use strategy::{StrategyTable, SystemSpec};

/// Crate-wide `Result` alias.
pub type Result<T> = std::result::Result<T, AvcError>;

//! Valuation of stock loans when the collateral's trend is unobservable.
//!
//! The borrower of a stock loan may redeem the collateral at any time before
//! maturity by repaying the accrued principal. When the stock's net drift is an
//! unobserved two-state (bull/bear) random variable, the redemption decision
//! couples an optimal-stopping problem with nonlinear filtering of the drift.
//! This crate provides:
//!
//! - [`model`]: parameters, payoff, regime classification, and the closed-form
//!   region constraints each regime imposes on the redemption set;
//! - [`filter`]: simulation of the filtered price/belief dynamics with
//!   reproducible per-path random streams;
//! - [`boundary1d`]: penalty finite-difference solvers for the complete
//!   information boundary problems and their redeeming boundaries;
//! - [`vi2d`]: the degenerate two-dimensional variational inequality solver
//!   with epsilon-regularization and free-boundary extraction;
//! - [`mc_oracle`]: independent valuation oracles (European, least-squares
//!   Monte Carlo, dynamic-programming lattice);
//! - [`properties`]: executable invariant suites over surfaces, boundaries and
//!   simulated paths;
//! - [`config`]: TOML run configuration shared with the command line tool.
//!
//! The data-parallel inner loops (path simulation, per-row PDE sweeps, grid
//! scans) run on rayon when the default `parallel` feature is enabled and fall
//! back to sequential loops without it. Results are identical either way.

pub mod boundary1d;
pub mod config;
pub mod error;
pub mod filter;
pub mod grid;
pub mod mc_oracle;
pub mod model;
pub(crate) mod par;
pub mod properties;
pub(crate) mod tridiag;
pub mod vi2d;

pub use error::{Error, Result};
pub use model::ModelParams;

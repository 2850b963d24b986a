//! Safety filtering for stochastic control systems with learned dynamics.
//!
//! The crate is organized around the pipeline that turns transition data into
//! certified control actions:
//!
//! * [`env`] — benchmark environments (pendulum, cartpole, a synthetic
//!   quadratic system) with bounded heteroscedastic process noise, LQR
//!   design, and Monte Carlo rollout oracles.
//! * [`ensemble`] — probabilistic ensembles of Gaussian MLPs: training,
//!   analytic Jacobians, and the sensor-fusion decomposition into nominal
//!   dynamics, aleatoric and epistemic covariance, and Kalman gain.
//! * [`tube`] — ellipsoid calculus and reachable-tube propagation with
//!   linearization-error inflation and constraint tightening.
//! * [`filter`] — the predictive safety filter: an SQP solver for the
//!   soft-constrained filtering problem plus the infeasibility backup scheme.
//! * [`termset`] — terminal-set fitting and sampling-based expansion.
//! * [`harness`] — experiment orchestration, configuration, metrics, and the
//!   operations behind the CLI subcommands.

pub mod ensemble;
pub mod env;
pub mod error;
pub mod filter;
pub mod harness;
pub(crate) mod opt;
pub mod rng;
pub mod stats;
pub mod termset;
pub mod tube;

pub use ensemble::{EnsembleModel, FusedMoments};
pub use env::{ConstraintSets, Environment, NoiseSpec};
pub use error::CoreError;
pub use termset::TerminalSet;
pub use tube::{DynamicsModel, Ellipsoid, LipschitzBundle, Tube};

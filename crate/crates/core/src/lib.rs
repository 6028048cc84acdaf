//! Joint estimation of the number of targets and their directions of arrival
//! from OFDM passive-radar array snapshots.
//!
//! The crate combines greedy orthogonal least squares (OLS) over an angle
//! grid with AIC/BIC model-order selection in three ways (eigenvalue-based,
//! selection-based, and a hybrid of both), alongside a fixed-threshold
//! baseline, and provides the Monte Carlo machinery used to compare them.

pub mod covariance;
pub mod detectors;
pub mod experiment;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod scene;
pub mod selftest;

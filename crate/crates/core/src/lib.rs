//! Two-regime threshold factor models for high-dimensional time series.
//!
//! The observed `p`-dimensional series `y_t` loads on a common low-dimensional
//! factor process through one of two loading matrices, selected by whether an
//! observable threshold variable `z_t` falls below or above an unknown value
//! `r0`. This crate estimates the two loading spaces, the threshold value and
//! the number of factors from lagged cross-moment matrices, screens candidate
//! threshold variables, and reproduces the standard simulation designs through
//! a Monte Carlo harness.
//!
//! Module map:
//!
//! - [`panel`]: observed panel, threshold series, regime partitions, CSV ingestion.
//! - [`moments`]: lagged cross-moment matrices and their quadratic aggregates.
//! - [`subspace`]: eigen-analysis, loading/complement spaces, subspace distance,
//!   eigenvalue-ratio factor counts.
//! - [`threshold`]: the projection objective, threshold search, model fit and
//!   signal recovery.
//! - [`screening`]: regime classification, CUSUM screening and held-out model
//!   comparison of candidate threshold variables.
//! - [`simulate`]: data-generating processes and the replication harness.
//! - [`export`]: delimited-text writers shared by the CLI.
//!
//! With the default `parallel` feature, grid evaluation, candidate screening and
//! Monte Carlo replications run on the rayon pool. Results never depend on the
//! number of worker threads.

pub mod error;
pub mod export;
pub mod linalg;
pub mod moments;
pub mod panel;
mod par;
pub mod screening;
pub mod simulate;
pub mod subspace;
pub mod threshold;

pub use error::{Error, Result};
pub use panel::{PanelSeries, RegimePartition, ThresholdSeries};
pub use subspace::{FactorCountEstimate, Subspace};
pub use threshold::{FitConfig, ObjectiveProfile, ThresholdFactorFit};

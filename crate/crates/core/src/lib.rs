//! System-identification toolkit for indoor thermal dynamics.
//!
//! Infers linear time-series models (ARX, ARMAX, ridge-regularized ARMAX,
//! state-space) from multivariate sensor logs, using normalized mutual
//! information to rank and select dominating exogenous inputs before fitting.
//!
//! Module map:
//! - [`dataset`]: CSV ingestion, train/test splitting, standardization.
//! - [`infotheory`]: symbolization, entropy, MI, square-root NMI, dependency matrices.
//! - [`linmodels`]: ARX / ARMAX estimation, simulation, one-step prediction, model fit.
//! - [`statespace`]: innovation-form state-space realization and simulation.
//! - [`pipeline`]: NMI-guided input selection, model inference, model-zoo comparison.
//! - [`synth`]: seeded synthetic data generation and naive reference oracles.

pub mod dataset;
mod error;
pub mod infotheory;
pub mod linmodels;
mod lstsq;
pub mod pipeline;
pub mod statespace;
pub mod synth;

pub use error::{Error, ErrorClass, Result};

/// Library version embedded in serialized models and reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Iterative targeted maximum likelihood estimation (TMLE) for d-dimensional
//! point-treatment parameters, using a one-dimensional canonical least
//! favorable submodel: every targeting round fits a single scalar fluctuation
//! along the normalized mean of the efficient influence curve.
//!
//! Module map:
//!
//! * [`data`]: validated `(W, A, Y)` datasets, outcome scaling, CSV ingest.
//! * [`glm`]: bounded `expit`/`logit` and the one-coefficient offset
//!   logistic solver used for every fluctuation.
//! * [`params`]: parameter mappings (treatment-specific means, ATE) with
//!   their clever covariates, influence curves and plug-in values.
//! * [`targeting`]: the targeting loop, its weighted variant and the
//!   micro-step (universal submodel) baseline.
//! * [`inference`]: influence-curve covariance, Wald intervals, reports.
//! * [`nuisance`]: main-terms logistic initial fits.
//! * [`sim`]: known-truth data generating processes and Monte Carlo runs.
//! * [`cli`]: the `tmle` command line.

pub mod cli;
pub mod data;
pub mod error;
pub mod glm;
pub mod inference;
pub mod nuisance;
pub mod params;
pub mod sim;
pub mod targeting;

pub use error::{Error, Result};

//! Bayesian adaptive anomaly detection for longitudinal steroid profiles.
//!
//! The crate models repeated urinary steroid measurements (six endogenous
//! steroid concentrations and five concentration ratios) per athlete and
//! derives personalised reference regions that adapt as samples accrue:
//!
//! - [`univariate`]: conjugate Normal-Gamma model per athlete and marker with
//!   closed-form posterior updates and predictive HPD limits;
//! - [`multivariate`]: hierarchical Gaussian/Wishart model over marker panels
//!   fit by Gibbs sampling, with joint and per-marker predictive regions;
//! - [`occ`]: the one-class classification workflow — population thresholds
//!   for the first sample, sequential HPD decisions afterwards, outlier
//!   exclusion from training histories, and random oversampling for
//!   imbalance-aware evaluation;
//! - [`eval`]: confusion-matrix metrics, ROC / precision-recall curves;
//! - [`cohort`]: a synthetic-cohort generator so every pipeline claim can be
//!   validated against known ground truth.

pub mod cohort;
pub mod csv_io;
pub mod error;
pub mod eval;
pub mod hpd;
pub mod linalg;
pub mod markers;
pub mod multivariate;
pub mod occ;
pub mod profile;
pub mod rng;
pub mod sampling;
pub mod univariate;

pub use error::{Error, Result};

//! Modified maximum likelihood estimation and inference for the fixed-effects
//! panel AR(1) model
//!
//! ```text
//! y_it = rho * y_{i,t-1} + x_it' beta + alpha_i + eps_it,   t = 1..T
//! ```
//!
//! with short `T` and large `N`. Incidental intercepts are removed by the
//! within transform and the resulting profile likelihood is corrected by the
//! `xi` penalty, which makes the estimators fixed-`T` consistent. Inference
//! stays valid at `rho = 1`, where the information matrix is singular.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod likelihood;
pub mod limit;
pub mod montecarlo;
pub mod panel;
pub mod poly;
pub mod rng;
pub mod xi;

pub use error::{Error, Result};
pub use estimators::{EstimateResult, EstimatorKind, EstimatorOptions};
pub use panel::{ConcentratedStats, PanelDataset, QMoments};
pub use xi::XiPoly;

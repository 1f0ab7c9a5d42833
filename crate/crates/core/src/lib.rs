//! Spatio-temporal copula time series models for multivariate probabilistic
//! forecasting.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod ann_quantile;
pub mod benchmark_garch;
pub mod concordance;
pub mod copula_elliptical;
pub mod copula_pair;
pub mod kde;
pub mod marginals;
pub mod pipeline;
pub mod scoring;
pub mod ts_model;
pub mod vine;

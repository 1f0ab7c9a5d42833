//! Data handling, synthetic generators and the expanding-window study.

pub mod adf;
pub mod backtest;
pub mod data;
pub mod rng;
pub mod synth;

pub use adf::{adf_test, AdfResult};
pub use backtest::{expanding_backtest, run_backtest, BacktestConfig, BacktestOutput, Forecaster};
pub use data::{difference, locf_impute, Dataset};
pub use synth::{synth_generate, SynthSpec};

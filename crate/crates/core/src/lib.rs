//! Post hoc epistemic uncertainty for trained feed-forward regressors.
//!
//! A network trained without dropout can still produce an uncertainty
//! estimate: switch dropout on at inference, run several stochastic passes,
//! and read the spread of the predictions. This crate provides the pieces
//! needed to do that and to judge the result:
//!
//! - [`nn`]: a small dense regressor with mini-batch SGD, optionally trained
//!   with dropout active ("embedded" dropout) for comparison.
//! - [`dropout`]: dropout configuration and Bernoulli masks.
//! - [`mc`]: Monte Carlo passes reduced to a predictive mean and variance.
//! - [`metrics`]: RMSE, Gaussian NLL, calibration curves, miscalibration area
//!   and balance.
//! - [`scaling`]: the NLL-optimal variance scale factor and its bisection
//!   relaxation toward zero balance.
//! - [`tuner`]: dropout-rate grid search with and without the scale factor.
//! - [`data`], [`experiment`], [`report`]: CSV ingestion, standardization,
//!   the repeated split protocol and report files.
//!
//! # Quick start
//!
//! ```rust
//! use injectdrop::dropout::DropoutConfig;
//! use injectdrop::mc::mc_predict;
//! use injectdrop::nn::{Activation, MlpModel};
//! use injectdrop::data::Features;
//!
//! # fn main() -> injectdrop::Result<()> {
//! let model = MlpModel::initialized(&[2, 16, 1], Activation::Relu, 7)?;
//! let inputs = Features::from_rows(&[vec![0.1, -0.3], vec![1.0, 0.5]])?;
//! let dropout = DropoutConfig::all_hidden(0.05, &model)?;
//! let estimate = mc_predict(&model, &inputs, &dropout, 100, 42)?;
//! assert_eq!(estimate.mean.len(), 2);
//! assert!(estimate.variance.iter().all(|v| *v >= 0.0));
//! # Ok(())
//! # }
//! ```

pub mod data;
pub mod dropout;
mod error;
pub mod experiment;
pub mod mc;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod scaling;
pub mod tuner;

pub use error::{Error, Result};

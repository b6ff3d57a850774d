//! Wind power forecasting toolkit.
//!
//! A small dense regressor trained with Adam-family optimizers extended by the
//! TriOpts strategies (gradient centralization, cosine learning-rate decay and
//! uniform parameter noise), permutation feature importance and LIME
//! explanations, and deterministic plus probabilistic forecast metrics.
//!
//! Module map:
//!
//! - [`network`]: MLP forward/backward for MSE and pinball losses.
//! - [`optim`]: Adam, Nadam, RMSprop and Adamax with switchable TriOpts hooks.
//! - [`data`]: CSV ingestion, scaling, windowing and chronological splits.
//! - [`metrics`]: R², NMAE, NRMSE, quantile score, CRPS and interval scores.
//! - [`explain`]: permutation importance and local linear surrogates.
//! - [`pipeline`]: run configuration, model files and the A/B benchmark that
//!   the command-line front end drives.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod explain;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod svg;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
pub use matrix::Matrix;

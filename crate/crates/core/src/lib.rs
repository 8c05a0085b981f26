//! Exact statistics of a linearly coupled sequence prior, closed-form bridge
//! posteriors, a clean-clip predictor and posterior-sampling inference, each
//! checked against independent oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod bridge;
pub mod cli;
pub mod config;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod prior;
pub mod quadrature;
pub mod spectral;
pub mod verify;

pub use config::RunConfig;
pub use error::{Error, Result};

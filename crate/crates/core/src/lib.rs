//! Desk-scale lab for label-smoothed neural code summarization.
//!
//! Modules, bottom-up: [`tensor`] (dense f64 autograd), [`smoothing`]
//! (smoothed targets and loss), [`corpus`] and [`astkit`] (data
//! preparation), [`models`], [`trainer`], [`metrics`], and [`lab`] (the
//! experiment protocols behind the `sumlab` binary).

pub mod astkit;
pub mod corpus;
pub mod error;
pub mod lab;
pub mod metrics;
pub mod models;
pub mod smoothing;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

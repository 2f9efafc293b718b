//! Self-adaptive control plane for an energy-aware forecasting pipeline.
//!
//! The managed system trains and serves one-step-ahead forecasters over an
//! air-quality stream. A monitor / analyze / plan / execute loop over a shared
//! knowledge base keeps it inside architect-defined adaptation boundaries by
//! switching between a light and a heavy model and retraining on drift.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyzer;
#[cfg(unix)]
pub mod control;
pub mod domain;
pub mod error;
pub mod executor;
pub mod forecast;
mod fsutil;
#[cfg(unix)]
pub mod harness;
pub mod ingestion;
pub mod knowledge;
pub mod managed;
pub mod monitor;
pub mod planner;

pub use error::{Error, Result};

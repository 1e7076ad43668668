//! Dual-band (sub-6 GHz + mmWave) MIMO-OFDM link-level simulator with
//! out-of-band aided channel estimation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod combining;
pub mod config;
pub mod dataset;
pub mod dft;
pub mod error;
pub mod experiments;
pub mod format;
pub mod linalg;
pub mod method;
pub mod metrics;
pub mod nn;
pub mod pilot;
pub mod pipeline;
pub mod precoding;
pub mod rng;

pub use error::{Error, Result};

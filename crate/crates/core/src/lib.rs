//! Nanosecond-level time-of-arrival estimation for Mode S / ADS-B packets
//! received with low-rate 8-bit IQ front ends.
//!
//! The crate is organised as a pipeline:
//!
//! - [`signal_model`]: BPPM chip mapping, Type-I/Type-II pulse extraction,
//!   rectangular and smoothed pulse/packet templates.
//! - [`synth`]: two-receiver synthetic traces with transmitter impairments,
//!   receiver clock errors, noise and ADC quantization.
//! - [`receiver`]: a minimal legacy receiver (preamble detection + bit
//!   decisions) that hands sample windows to the TOA block.
//! - [`resample`]: band-limited upsampling of packet windows.
//! - [`toa`]: the TOA estimators and per-packet signal metrics.
//! - [`eval`]: two-receiver precision evaluation with clock-drift removal.
//! - [`pipeline`]: glue used by the command-line front end and the
//!   acceptance suite.

pub mod correlate;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod iq;
pub mod pipeline;
pub mod receiver;
pub mod resample;
pub mod rng;
pub mod signal_model;
pub mod synth;
pub mod toa;

pub use error::{Error, Result};

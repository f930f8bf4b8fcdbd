//! Bursty application-layer traffic for XR streaming.
//!
//! The crate is organised bottom-up:
//!
//! - [`rv`]: seedable random-variate streams (logistic, two-component
//!   Gaussian mixture, empirical CDFs).
//! - [`model`]: the VR traffic model mapping a target data rate and frame
//!   rate to a logistic inter-frame interval and a Gaussian-mixture frame size.
//! - [`generator`]: the burst generator interface with simple, VR and
//!   trace-replay implementations, plus the trace CSV format.
//! - [`wire`]: the 24-byte fragment header, burst fragmentation and the
//!   best-effort reassembly state machine.
//! - [`sim`]: a deterministic discrete-event simulator of stations sharing a
//!   FIFO bottleneck link, producing fragment- and burst-level delay metrics.
//! - [`fit`]: the fitting pipeline that recovers the model constants from
//!   traces.

pub mod error;
pub mod fit;
pub mod generator;
pub mod model;
pub mod rv;
pub mod sim;
pub mod wire;

pub use error::{Error, Result};

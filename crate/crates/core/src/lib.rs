//! Pure building blocks of the gasduino air-quality telemetry stack.
//!
//! Everything here is `no_std` + `alloc`: the MQ-135 sensing model, the
//! air-quality classification scale, the binary uplink codec, the node-side
//! send buffer and backoff policy, and the per-node series state the
//! ingestion service keeps (dedup window, ordering, alert transitions).
//! IO, sockets, persistence and the CLI live in the `gasduino` crate.

#![no_std]

extern crate alloc;

pub mod aqi;
pub mod node;
pub mod sensor;
pub mod series;
pub mod wire;

pub use aqi::{classify, describe, indicator_for, AqiStatus, Category, Indicator};
pub use sensor::{AmbientProfile, SensorCurve};
pub use wire::{Frame, FrameBody, Telemetry};

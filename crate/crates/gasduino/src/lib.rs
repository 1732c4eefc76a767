//! Runtime side of the gasduino air-quality stack: the simulated node agent,
//! the ingestion and query service with its on-disk store, configuration
//! loading, chart rendering and the `gasduino` command line.

pub mod agent;
pub mod api;
pub mod chart;
pub mod cli;
pub mod client;
pub mod clock;
pub mod config;
pub mod server;
pub mod store;
pub mod transport;

pub use gasduino_core as core;

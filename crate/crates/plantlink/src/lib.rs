//! Aggregator to plant link over TCP.
//!
//! One JSON message per line. The plant owns the clock: it publishes a
//! measurement frame, waits a bounded time for the aggregator's commands,
//! filters and applies them and steps the fleet. See [`wire`] for the
//! message layout.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod server;
pub mod wire;

pub use client::{AggregatorClient, ClientError};
pub use server::{serve, serve_connection, ServeError, ServeReport, ServerConfig};
pub use wire::{decode, encode, CommandMessage, ErrorMessage, Message, WireError};

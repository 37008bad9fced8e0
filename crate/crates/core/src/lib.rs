//! Physics, control and accounting for an aggregation of air conditioners
//! providing frequency regulation.
//!
//! The crate is organised bottom-up:
//!
//! * [`thermal`] extended equivalent-thermal-parameter house model with a
//!   lossy Carnot air conditioner, integrated with fixed-step RK4.
//! * [`house`] thermostat, lockout, sensor lag and inrush bookkeeping for a
//!   single house.
//! * [`fleet`] heterogeneous populations stepped in lock-step.
//! * [`plant`] the plant side of the aggregator boundary (fleet + device
//!   agents + feasibility filtering).
//! * [`controller`] PI, Markov-chain broadcast and packetized (PEM)
//!   aggregator controllers.
//! * [`channel`], [`signal`], [`grid`], [`metrics`] supporting models.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod channel;
pub mod controller;
pub mod fleet;
pub mod grid;
pub mod house;
pub mod metrics;
pub mod ode;
pub mod plant;
pub mod signal;
pub mod thermal;

pub use house::HouseId;

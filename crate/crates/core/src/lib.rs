//! Markovian traffic equilibrium for ride-hailing fleets.
//!
//! Vehicles circulate on a congested road network, picking up passengers
//! whose arrival is matched against empty-vehicle flow, and choose links and
//! orders by solving a discounted semi-Markov decision problem. An
//! equilibrium is a fleet distribution consistent with those choices, with
//! flow conservation, and with the congestion and matching it induces.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod extensions;
pub mod fixtures;
pub mod loading;
pub mod metrics;
pub mod microsim;
pub mod network;
pub mod smdp;

pub use error::{MterError, Result};

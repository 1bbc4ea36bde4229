//! Deterministic discrete-event simulator and library for a fair
//! cloud-hosted exchange fabric: overlay multicast with hold-and-release for
//! market data, and a sequencing tree for inbound orders.

pub mod clock;
pub mod engine;
pub mod error;
pub mod harness;
pub mod hold_release;
pub mod inbound;
pub mod loq;
pub mod mcast;
pub mod montecarlo;
pub mod netsim;
pub mod sequencer;
pub mod stats;
pub mod types;

pub use error::{Error, Result};

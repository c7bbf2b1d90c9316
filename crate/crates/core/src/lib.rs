//! Wideband millimeter-wave beam training with true-time-delay receive
//! arrays over CP-OFDM.
//!
//! Modules build on each other in this order: [`config`], [`arraylab`],
//! [`channel`], [`phy`], [`oracle`], [`training`], [`harness`].

pub mod arraylab;
pub mod channel;
pub mod config;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod phy;
pub mod training;

pub use error::{Error, Result};

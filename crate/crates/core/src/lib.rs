//! Event-driven DDR5 refresh-management timing simulator.

pub mod addressing;
pub mod agents;
pub mod analytics;
pub mod channel;
pub mod controller;
pub mod dos;
pub mod dram;
pub mod error;
pub mod experiment;
pub mod rfm;
pub mod sim;
pub mod system;
pub mod trace;

pub use error::{Error, Result};

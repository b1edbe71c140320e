//! Finite-blocklength URLLC downlink through a reconfigurable intelligent
//! surface, with a TD3 resource allocator.

pub mod agent;
pub mod channel;
pub mod cmat;
pub mod env;
pub mod error;
pub mod fbl;
pub mod harness;
pub mod neural;
pub mod precode;
pub mod ris;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

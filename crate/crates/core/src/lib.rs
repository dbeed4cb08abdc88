//! Algorithmic core of a surrogate-assisted multi-objective optimizer.
//!
//! The crate is `no_std` (with `alloc`). All randomness flows through
//! caller-supplied generators and all IO lives in the companion `smoo` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod acq;
pub mod bench;
pub mod deepgp;
mod error;
pub mod math;
pub mod neural;
pub mod optimizer;
pub mod pareto;
pub mod quality;
pub mod rankclf;
pub mod rng;

pub use error::{Error, Result};

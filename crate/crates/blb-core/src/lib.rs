//! Building blocks for hybrid HE/MPC Transformer inference at desk scale.
//!
//! The crate is `no_std` with `alloc`. Everything that touches files, the
//! command line or wall-clock time lives in the `blb` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bridge;
pub mod error;
pub mod fuser;
pub mod matmul;
pub mod mpc;
pub mod matrix;
pub mod packing;
pub mod ring_ckks;
pub mod rng;
pub mod runtime;

pub use error::{Error, Result};

//! Equivariant molecular diffusion on atom features and coordinates.
//!
//! The crate is `no_std` (with `alloc`) and carries the numerical core:
//! geometry primitives, variance schedules, the dual SchNet score network,
//! the variational noise encoder, training, sampling and chemistry metrics.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod chem_eval;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod params;
pub mod sampling;
pub mod schedule;
pub mod score_net;
pub mod training;
pub mod varnoise;

pub use error::{MdmError, Result};

//! Iterative magnitude pruning (IMP) for small Hamiltonian neural networks,
//! together with the flow analytics used to read a pruning run as a
//! coarse-graining procedure: per-layer magnitude fractions, eigenvalue and
//! scale-exponent estimates, and power-law fits of error against density.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `std` feature to let
//! the matrix kernels pick SIMD paths at runtime, and `serde` to derive
//! (de)serialization for the public record types.
//!
//! Module map:
//!
//! - [`nn`]: dense network, masks, forward-mode time derivatives, reverse-mode
//!   parameter gradients, Adam training.
//! - [`tasks`]: the nonlinear oscillator and Hénon-Heiles residual losses.
//! - [`imp`]: prune / rewind / retrain loop and winning-ticket detection.
//! - [`rg`]: magnitude fractions, λ and σ estimates, power-law fitting.
//! - [`transfer`]: mask transfer between the 2-output and 4-output networks.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod stats;

pub mod dual;
pub mod imp;
pub mod nn;
pub mod rg;
pub mod tasks;
pub mod transfer;

pub use error::{Error, Result};
pub use stats::{mean, median3_smooth, ols, standard_error, LinearFit};

//! Core algorithms for designing and simulating quantized, decentralized
//! periodic event-triggered control loops.
//!
//! The crate is split along the design workflow:
//!
//! * [`matrix`] / [`numkernel`] — dense real-matrix kernels (matrix
//!   exponential, symmetric eigen-decomposition, PSD projection and
//!   factorization, spectral norms, linear solves).
//! * [`sysmodel`] — plant/controller models and the structured matrices of
//!   the impulsive closed-loop model (jump maps, quantization-error columns,
//!   event quadratic forms).
//! * [`riccati`] — Hamiltonian flow, the sampled Riccati solution `P(r)` on
//!   `[0, h]`, and its spectral bounds.
//! * [`lmidesign`] — the jump LMI, a feasibility solver, threshold sizing and
//!   worst-case bit/zoom bounds; produces verifiable design certificates.
//! * [`etcsim`] — the hybrid simulator: continuous flow between samples,
//!   per-channel events, zoom quantization, atomic jumps, threshold updates,
//!   plus a time-triggered baseline.
//! * [`analysis`] — Lyapunov/L2 bookkeeping along traces and transmission
//!   statistics.
//!
//! Everything here is pure computation over `alloc` types; IO, file formats
//! and the command-line front end live in the companion `petc-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod error;
pub mod etcsim;
pub mod lmidesign;
pub mod matrix;
pub mod numkernel;
pub mod riccati;
pub mod sysmodel;

pub use error::{Error, Result};
pub use matrix::Matrix;

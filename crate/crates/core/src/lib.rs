//! Device- and locality-level fingerprinting of shared quantum processors
//! from crosstalk error rates measured with idle tomography.
//!
//! The crate simulates a fleet of nine small tree-shaped devices, generates
//! idle-tomography experiment suites, samples their outcomes under a Pauli
//! error model with per-batch drift, estimates Hamiltonian, stochastic,
//! affine and correlated-pair error rates, assembles them into fingerprints,
//! and trains classifiers that recover which embedded locality a probe
//! circuit ran on.

pub mod classify;
pub mod error;
pub mod fingerprint;
pub mod idt;
pub mod noisesim;
pub mod par;
pub mod pauli;
pub mod pipeline;
pub mod seed;
mod store;
pub mod topology;

pub use error::{Error, Result};

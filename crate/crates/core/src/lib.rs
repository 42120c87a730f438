//! Maximal displacement of critical branching random walks on the integers.
//!
//! Particles jump according to a drift-free step law and then reproduce
//! according to a critical offspring law. The crate computes the tail
//! `u(x) = P{M ≥ x}` of the all-time maximum `M` and its space-time analogue
//! `v_n(x) = P{M_n ≥ x}` by fixed-point and forward recursions, simulates the
//! process, and checks the recursions against their scaling limits.

pub mod continuum;
pub mod diagnostics;
pub mod estimators;
pub mod gw;
pub mod lattice;
pub mod laws;
pub mod rng;
pub mod simulate;
pub mod verify;

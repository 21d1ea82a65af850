//! Simulation toolkit for a quantum repeater built on two-photon
//! Hong-Ou-Mandel-type interference between atomic-ensemble memories.
//!
//! The crate is organised bottom-up:
//!
//! - [`linear_optics`] — a sparse truncated-Fock-space engine: states over
//!   labelled bosonic modes, linear mode transformations (beam splitters,
//!   polarizing beam splitters), photon-loss channels and detector models.
//! - [`ensembles`] — atomic-ensemble write/retrieve processes producing
//!   memory-photon entangled states.
//! - [`stations`] — the three protocol circuits: heralded entanglement
//!   generation, entanglement swapping, and entanglement purification,
//!   acting as conditional-state transformers.
//! - [`repeater`] — chain-level protocol model: swap-level coefficient
//!   evolution, the waiting-time recursion and its closed forms, and a
//!   seeded Monte Carlo of the full nested protocol.
//! - [`analysis`] — scaling-exponent fits, the phase-stability comparison,
//!   and the post-selected polarization-correlation check.
//! - [`oracle`] — an independent dense-matrix reference implementation used
//!   to validate the sparse engine.
//! - [`cli`] — command-line entry point (config parsing, presets, CSV).

pub mod analysis;
pub mod cli;
pub mod ensembles;
mod error;
pub mod linear_optics;
pub mod oracle;
pub mod repeater;
pub mod stations;

pub use error::{Error, Result};

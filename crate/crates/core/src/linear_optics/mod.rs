//! Sparse truncated-Fock-space engine over labelled bosonic modes.
//!
//! States are stored as sparse maps from occupation vectors to complex
//! amplitudes, with a global cap `n_max` on the total occupation across all
//! modes of a state. Mixed states are weighted ensembles of pure states
//! ([`BranchEnsemble`]); every channel in this crate is a composition of
//! loss and measurement, for which the branch form is an exact unraveling
//! of the density matrix.
//!
//! Phase conventions (fixed once for the whole crate):
//!
//! - 50:50 beam splitter and the H/V→±45° rotation: (1/√2)[[1,1],[1,−1]].
//! - PBS transmits |H⟩ within its spatial slot and reflects |V⟩ into the
//!   other slot with reflection phase +1. PBS± is the same element
//!   conjugated by the ±45° rotation on each slot.

mod element;
mod ensemble;
mod state;

pub use element::OpticalElement;
pub use ensemble::{Branch, BranchEnsemble, MeasurementOutcome};
pub use state::{Occupation, PureState};

use std::fmt;

use crate::{Error, Result};

/// Amplitudes with |a| below this are pruned after each transformation.
pub const AMPLITUDE_PRUNE: f64 = 1e-14;

/// Communication site holding one or more memory qubits.
///
/// `A`–`D` are the protocol sites; the remaining values label auxiliary
/// qubit slots co-located with a protocol site (purification operates on
/// two pairs between the same two sites, and every mode label must be
/// unique, so the second pair is carried on auxiliary slots).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Site::A => "A",
            Site::B => "B",
            Site::C => "C",
            Site::D => "D",
            Site::E => "E",
            Site::F => "F",
            Site::G => "G",
            Site::H => "H",
        };
        f.write_str(s)
    }
}

/// One of the two atomic ensembles forming a memory qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ensemble {
    U,
    D,
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ensemble::U => "u",
            Ensemble::D => "d",
        })
    }
}

/// Physical nature of a mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    /// Collective atomic excitation (memory).
    Atomic,
    /// Photon emitted by the write process.
    Stokes,
    /// Photon produced by read-out of the memory.
    AntiStokes,
    /// Transient environment mode used by loss channels.
    Env,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Atomic => "atomic",
            Field::Stokes => "st",
            Field::AntiStokes => "as",
            Field::Env => "env",
        })
    }
}

/// Photon polarization; atomic modes carry `NoPol`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarization {
    H,
    V,
    NoPol,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarization::H => "H",
            Polarization::V => "V",
            Polarization::NoPol => "-",
        })
    }
}

/// Unique label of one bosonic mode.
///
/// Labels order lexicographically over (site, ensemble, field,
/// polarization); this ordering fixes the canonical mode ordering of every
/// state and of the dense oracle basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeLabel {
    pub site: Site,
    pub ensemble: Ensemble,
    pub field: Field,
    pub polarization: Polarization,
}

impl ModeLabel {
    /// Atomic (memory) mode of one ensemble; carries no polarization.
    pub fn atomic(site: Site, ensemble: Ensemble) -> Self {
        ModeLabel {
            site,
            ensemble,
            field: Field::Atomic,
            polarization: Polarization::NoPol,
        }
    }

    /// Stokes photon mode emitted by the given ensemble.
    pub fn stokes(site: Site, ensemble: Ensemble, polarization: Polarization) -> Self {
        ModeLabel {
            site,
            ensemble,
            field: Field::Stokes,
            polarization,
        }
    }

    /// Anti-Stokes photon mode produced by reading the given ensemble.
    pub fn anti_stokes(site: Site, ensemble: Ensemble, polarization: Polarization) -> Self {
        ModeLabel {
            site,
            ensemble,
            field: Field::AntiStokes,
            polarization,
        }
    }

    /// Transient environment partner of `self` for a loss channel.
    pub fn env_partner(&self) -> Self {
        ModeLabel {
            field: Field::Env,
            ..*self
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.field == Field::Atomic && self.polarization != Polarization::NoPol {
            return Err(Error::InvalidArgument(format!(
                "atomic mode {self} must not carry polarization"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}.{}.{}",
            self.site, self.ensemble, self.field, self.polarization
        )
    }
}

/// Single-photon detector model.
///
/// `number_resolving = false` models a threshold (click/no-click) detector:
/// on `n` incident photons it stays silent with probability (1−η)ⁿ and
/// clicks otherwise. A number-resolving detector reports the detected
/// photon count, each photon being seen independently with probability η.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub number_resolving: bool,
}

impl DetectorModel {
    pub fn new(efficiency: f64, number_resolving: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&efficiency) || !efficiency.is_finite() {
            return Err(Error::OutOfRange {
                name: "detector efficiency",
                value: efficiency,
            });
        }
        Ok(DetectorModel {
            efficiency,
            number_resolving,
        })
    }

    /// Unit-efficiency number-resolving detector.
    pub fn ideal() -> Self {
        DetectorModel {
            efficiency: 1.0,
            number_resolving: true,
        }
    }

    /// Threshold detector with the given efficiency.
    pub fn threshold(efficiency: f64) -> Result<Self> {
        Self::new(efficiency, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_labels_sort_by_site_then_ensemble_then_field() {
        let a_u_at = ModeLabel::atomic(Site::A, Ensemble::U);
        let a_u_st = ModeLabel::stokes(Site::A, Ensemble::U, Polarization::H);
        let a_d_at = ModeLabel::atomic(Site::A, Ensemble::D);
        let b_u_at = ModeLabel::atomic(Site::B, Ensemble::U);
        let mut v = vec![b_u_at, a_d_at, a_u_st, a_u_at];
        v.sort();
        assert_eq!(v, vec![a_u_at, a_u_st, a_d_at, b_u_at]);
    }

    #[test]
    fn atomic_mode_rejects_polarization() {
        let bad = ModeLabel {
            site: Site::A,
            ensemble: Ensemble::U,
            field: Field::Atomic,
            polarization: Polarization::H,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn detector_model_range_check() {
        assert!(DetectorModel::new(1.2, false).is_err());
        assert!(DetectorModel::new(-0.1, true).is_err());
        assert!(DetectorModel::new(0.99, false).is_ok());
    }
}

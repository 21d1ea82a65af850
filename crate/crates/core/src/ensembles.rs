//! Atomic-ensemble sources and memories.
//!
//! A write pulse on one ensemble prepares the two-mode-squeezed
//! atom-photon state Σₙ χ^(n/2)·(S†a†)ⁿ/n!·|0⟩ (normalized), i.e. Fock
//! amplitudes 1, √χ, χ, … on the paired occupations. Two ensembles at one
//! site, emitting orthogonally polarized Stokes photons, form a memory
//! qubit. Read-out converts collective excitations into anti-Stokes
//! photons through a beam-splitter loss of transmittance η_r.

use crate::linear_optics::{
    BranchEnsemble, Ensemble, ModeLabel, Polarization, PureState, Site,
};
use crate::{Error, Result};

/// Write-process parameters: per-pulse excitation probability χ and the
/// order at which the squeezing series is truncated.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleParams {
    pub chi: f64,
    pub truncation_order: u32,
}

impl EnsembleParams {
    pub fn new(chi: f64, truncation_order: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&chi) || !chi.is_finite() {
            return Err(Error::OutOfRange {
                name: "chi",
                value: chi,
            });
        }
        if truncation_order < 1 {
            return Err(Error::InvalidArgument(
                "truncation_order must be at least 1".into(),
            ));
        }
        Ok(EnsembleParams {
            chi,
            truncation_order,
        })
    }

    /// The protocol analysis assumes χ ≪ 1; callers may surface this.
    pub fn chi_warning(&self) -> Option<String> {
        (self.chi > 0.1).then(|| {
            format!(
                "chi = {} is outside the weak-excitation regime (chi <= 0.1)",
                self.chi
            )
        })
    }
}

/// Memory read-out parameters.
#[derive(Clone, Copy, Debug)]
pub struct RetrievalParams {
    pub eta_r: f64,
}

impl RetrievalParams {
    pub fn new(eta_r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta_r) || !eta_r.is_finite() {
            return Err(Error::OutOfRange {
                name: "eta_r",
                value: eta_r,
            });
        }
        Ok(RetrievalParams { eta_r })
    }
}

/// Atomic mode of one ensemble.
pub fn atomic_mode(site: Site, ensemble: Ensemble) -> ModeLabel {
    ModeLabel::atomic(site, ensemble)
}

/// Stokes mode of one ensemble; the u ensemble emits |H⟩, d emits |V⟩.
pub fn stokes_mode(site: Site, ensemble: Ensemble) -> ModeLabel {
    let pol = match ensemble {
        Ensemble::U => Polarization::H,
        Ensemble::D => Polarization::V,
    };
    ModeLabel::stokes(site, ensemble, pol)
}

/// Anti-Stokes mode produced by reading one ensemble; same u→H, d→V map.
pub fn anti_stokes_mode(site: Site, ensemble: Ensemble) -> ModeLabel {
    let pol = match ensemble {
        Ensemble::U => Polarization::H,
        Ensemble::D => Polarization::V,
    };
    ModeLabel::anti_stokes(site, ensemble, pol)
}

/// The four modes of one memory qubit (two atomic + two Stokes).
pub fn memory_qubit_modes(site: Site) -> [ModeLabel; 4] {
    [
        atomic_mode(site, Ensemble::U),
        atomic_mode(site, Ensemble::D),
        stokes_mode(site, Ensemble::U),
        stokes_mode(site, Ensemble::D),
    ]
}

/// Write process on a single ensemble: generates the exponential squeezing
/// series term by term with the engine's creation operators, truncated at
/// `params.truncation_order` excitation pairs (and by the state's `n_max`),
/// then normalizes.
pub fn write(
    params: &EnsembleParams,
    atomic: ModeLabel,
    stokes: ModeLabel,
    n_max: u32,
) -> Result<PureState> {
    if atomic == stokes {
        return Err(Error::DuplicateMode(atomic.to_string()));
    }
    let vac = PureState::vacuum(&[atomic, stokes], n_max)?;
    let mut sum = vac.clone();
    let mut term = vac;
    let sqrt_chi = params.chi.sqrt();
    for n in 1..=params.truncation_order {
        // term ← term · √χ·S†a†/n, so term stays (√χ·S†a†)ⁿ/n!·|0⟩.
        term = term
            .apply_creation(&atomic)?
            .apply_creation(&stokes)?
            .scaled(num_complex::Complex64::new(sqrt_chi / n as f64, 0.0));
        if term.norm_sqr() == 0.0 {
            break;
        }
        sum = add_states(&sum, &term)?;
    }
    Ok(sum.normalized())
}

/// Write on both ensembles of a site: the u ensemble pairs with an |H⟩
/// Stokes photon, d with |V⟩. Renormalized after truncation.
pub fn write_memory_qubit(params: &EnsembleParams, site: Site, n_max: u32) -> Result<PureState> {
    let u = write(
        params,
        atomic_mode(site, Ensemble::U),
        stokes_mode(site, Ensemble::U),
        n_max,
    )?;
    let d = write(
        params,
        atomic_mode(site, Ensemble::D),
        stokes_mode(site, Ensemble::D),
        n_max,
    )?;
    Ok(u.tensor(&d)?.normalized())
}

/// Read out one ensemble: every collective excitation is converted into an
/// anti-Stokes photon, which then passes a loss of transmittance η_r. The
/// atomic mode remains in the state, in vacuum.
pub fn retrieve(
    state: &BranchEnsemble,
    atomic: &ModeLabel,
    anti_stokes: ModeLabel,
    params: &RetrievalParams,
) -> Result<BranchEnsemble> {
    let moved = state.map_states(|s| {
        // Conversion is a relabel: occupation moves wholesale onto the
        // fresh photonic mode, leaving the atomic mode empty.
        s.add_mode(anti_stokes)?
            .relabel_modes(&[(*atomic, anti_stokes), (anti_stokes, *atomic)])
    })?;
    moved.loss_channel(&anti_stokes, params.eta_r)
}

fn add_states(a: &PureState, b: &PureState) -> Result<PureState> {
    if a.modes() != b.modes() {
        return Err(Error::ModeMismatch);
    }
    let mut amps: std::collections::BTreeMap<_, _> = a.iter().map(|(k, v)| (k.clone(), *v)).collect();
    for (k, v) in b.iter() {
        *amps.entry(k.clone()).or_insert(num_complex::Complex64::default()) += *v;
    }
    Ok(PureState::from_parts(a.modes().to_vec(), a.n_max(), amps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(chi: f64) -> EnsembleParams {
        EnsembleParams::new(chi, 2).unwrap()
    }

    #[test]
    fn write_with_zero_chi_is_vacuum() {
        let a = atomic_mode(Site::A, Ensemble::U);
        let s = stokes_mode(Site::A, Ensemble::U);
        let out = write(&params(0.0), a, s, 4).unwrap();
        assert!((out.amplitude(&[]).unwrap().re - 1.0).abs() < 1e-12);
        assert_eq!(out.support_len(), 1);
    }

    #[test]
    fn write_series_coefficients() {
        // χ = 0.01: Fock amplitudes 1, √χ, χ on the 0,1,2 excitation
        // pairs, equivalently series coefficients 1, 0.1, 0.005 on the
        // operator monomials (S†a†)ⁿ (their Fock norm is n!/√(n!²)… i.e.
        // the |n,n⟩ amplitude is n!·cₙ/n! with cₙ the monomial weight).
        let chi = 0.01f64;
        let a = atomic_mode(Site::A, Ensemble::U);
        let s = stokes_mode(Site::A, Ensemble::U);
        let out = write(&params(chi), a, s, 4).unwrap();
        let a0 = out.amplitude(&[]).unwrap().re;
        let a1 = out.amplitude(&[(a, 1), (s, 1)]).unwrap().re;
        let a2 = out.amplitude(&[(a, 2), (s, 2)]).unwrap().re;
        // Ratios are truncation-safe even after normalization.
        assert!((a1 / a0 - chi.sqrt()).abs() < 1e-12);
        assert!((a2 / a0 - chi).abs() < 1e-12);
        // Operator-series coefficient of (S†a†)²/1: a2/(2!·a0)·… the
        // monomial itself creates 2!·|2,2⟩/2! → series coefficient:
        let c2 = a2 / a0 / 2.0;
        assert!((c2 - 0.005).abs() < 1e-12);
    }

    #[test]
    fn write_ratio_holds_across_chi_grid() {
        let a = atomic_mode(Site::A, Ensemble::U);
        let s = stokes_mode(Site::A, Ensemble::U);
        for &chi in &[1e-4, 1e-3, 1e-2, 0.05, 0.1] {
            let out = write(&params(chi), a, s, 4).unwrap();
            let a0 = out.amplitude(&[]).unwrap().re;
            let a1 = out.amplitude(&[(a, 1), (s, 1)]).unwrap().re;
            let a2 = out.amplitude(&[(a, 2), (s, 2)]).unwrap().re;
            assert!((a1 / a0 - chi.sqrt()).abs() < 1e-12);
            assert!((a2 / a1 - chi.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn write_excitation_numbers_are_paired() {
        let a = atomic_mode(Site::A, Ensemble::U);
        let s = stokes_mode(Site::A, Ensemble::U);
        let out = write(&EnsembleParams::new(0.04, 3).unwrap(), a, s, 6).unwrap();
        let ia = out.mode_index(&a).unwrap();
        let is = out.mode_index(&s).unwrap();
        for (k, _) in out.iter() {
            assert_eq!(k[ia], k[is], "atomic and Stokes occupations differ");
        }
        let na = out.expected_occupation(&a).unwrap();
        let ns = out.expected_occupation(&s).unwrap();
        assert!((na - ns).abs() < 1e-12);
    }

    #[test]
    fn memory_qubit_zero_chi_is_four_mode_vacuum() {
        let out = write_memory_qubit(&params(0.0), Site::A, 4).unwrap();
        assert_eq!(out.modes().len(), 4);
        assert_eq!(out.support_len(), 1);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn memory_qubit_first_order_sector_is_qubit_photon_entangled() {
        let chi = 0.01f64;
        let out = write_memory_qubit(&params(chi), Site::A, 4).unwrap();
        let au = atomic_mode(Site::A, Ensemble::U);
        let ad = atomic_mode(Site::A, Ensemble::D);
        let su = stokes_mode(Site::A, Ensemble::U);
        let sd = stokes_mode(Site::A, Ensemble::D);
        let a0 = out.amplitude(&[]).unwrap().re;
        let up = out.amplitude(&[(au, 1), (su, 1)]).unwrap().re;
        let dp = out.amplitude(&[(ad, 1), (sd, 1)]).unwrap().re;
        // (S†_u a†_H + S†_d a†_V)·√χ with equal weights.
        assert!((up / a0 - chi.sqrt()).abs() < 1e-12);
        assert!((dp / a0 - chi.sqrt()).abs() < 1e-12);
        // No cross terms pairing u with the V photon.
        assert!(out.amplitude(&[(au, 1), (sd, 1)]).unwrap().norm() < 1e-14);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn retrieve_unit_efficiency_preserves_excitation_number() {
        let a = atomic_mode(Site::B, Ensemble::U);
        let s = stokes_mode(Site::B, Ensemble::U);
        let anti = anti_stokes_mode(Site::B, Ensemble::U);
        let written = write(&params(0.04), a, s, 4).unwrap();
        let ens = BranchEnsemble::from_pure(written.clone());
        let out = retrieve(&ens, &a, anti, &RetrievalParams::new(1.0).unwrap()).unwrap();
        assert_eq!(out.branches().len(), 1);
        let n_before = written.expected_occupation(&a).unwrap();
        let n_after = out.branches()[0].state.expected_occupation(&anti).unwrap();
        assert!((n_before - n_after).abs() < 1e-12);
        assert!(out.expected_occupation(&a).unwrap() < 1e-14);
    }

    #[test]
    fn retrieve_single_excitation_branches_on_eta_r() {
        let a = atomic_mode(Site::B, Ensemble::U);
        let anti = anti_stokes_mode(Site::B, Ensemble::U);
        let eta_r = 0.98;
        let one = PureState::vacuum(&[a], 4).unwrap().apply_creation(&a).unwrap();
        let out = retrieve(
            &BranchEnsemble::from_pure(one),
            &a,
            anti,
            &RetrievalParams::new(eta_r).unwrap(),
        )
        .unwrap();
        assert_eq!(out.branches().len(), 2);
        assert!((out.branches()[0].weight - eta_r).abs() < 1e-12);
        assert!((out.branches()[1].weight - (1.0 - eta_r)).abs() < 1e-12);
    }

    #[test]
    fn retrieve_two_excitations_binomial_weights() {
        let a = atomic_mode(Site::B, Ensemble::U);
        let anti = anti_stokes_mode(Site::B, Ensemble::U);
        let eta_r: f64 = 0.7;
        let two = PureState::vacuum(&[a], 4)
            .unwrap()
            .apply_creation(&a)
            .unwrap()
            .apply_creation(&a)
            .unwrap()
            .normalized();
        let out = retrieve(
            &BranchEnsemble::from_pure(two),
            &a,
            anti,
            &RetrievalParams::new(eta_r).unwrap(),
        )
        .unwrap();
        let expected = [
            eta_r * eta_r,
            2.0 * eta_r * (1.0 - eta_r),
            (1.0 - eta_r) * (1.0 - eta_r),
        ];
        assert_eq!(out.branches().len(), 3);
        for (b, e) in out.branches().iter().zip(expected) {
            assert!((b.weight - e).abs() < 1e-12);
        }
    }

    #[test]
    fn chi_range_checks() {
        assert!(EnsembleParams::new(-0.1, 2).is_err());
        assert!(EnsembleParams::new(f64::NAN, 2).is_err());
        assert!(EnsembleParams::new(0.2, 2).unwrap().chi_warning().is_some());
        assert!(EnsembleParams::new(0.05, 2).unwrap().chi_warning().is_none());
    }
}

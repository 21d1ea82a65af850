//! Protocol circuits: heralded entanglement generation, entanglement
//! swapping, and purification, each expressed as a conditional-state
//! transformer returning one [`DetectionOutcome`] per click pattern.
//!
//! # Station geometry
//!
//! Both Bell-measurement stations interfere two spatial slots each carrying
//! an H and a V mode, and read four detectors. Detector naming follows a
//! crossed convention: D1 and D2 read the first output slot, D3 and D4 the
//! second, with D4 the "same-basis-as-D1" detector of the second slot:
//!
//! - generation station: PBS± first, then per-slot H/V detection.
//!   D1 = slot1·H, D2 = slot1·V, D3 = slot2·V, D4 = slot2·H.
//! - swapping station: PBS (H/V) first, then per-slot ±45° detection.
//!   D1 = slot1·+, D2 = slot1·−, D3 = slot2·−, D4 = slot2·+.
//! - purification: per-site PBS; the reflected slots are detected in the
//!   ±45° basis with the same D1…D4 roles; the transmitted slots are
//!   restored into the memories.
//!
//! A coincidence of exactly two detectors, one from {D1,D2} and one from
//! {D3,D4}, is accepted (number-resolving detectors additionally demand
//! exactly one photon at each). The four accepted patterns yield the same
//! conditional state up to a local unitary; the fixed correction table
//! below maps each pattern onto the D1&D4 canonical form.
//!
//! # Pattern correction table
//!
//! | station      | D1&D4 | D1&D3                   | D2&D3                                 | D2&D4                    |
//! |--------------|-------|-------------------------|---------------------------------------|--------------------------|
//! | generation   | —     | swap u↔d at left site   | phase i per excitation left, −i right | swap u↔d at right site   |
//! | swapping     | —     | flip sign of d at left  | flip sign of d at both sites          | flip sign of d at right  |
//! | purification | —     | flip sign of d at right | flip sign of d at both sites          | flip sign of d at left   |
//!
//! "left"/"right" are the two sites holding the conditional state; a "−"
//! click on the first slot's detector (D2) corrects the site on that slot's
//! side, a "−" click on the second slot (D3) corrects the other site. These
//! conventions are a choice (the physical layout fixes the states only up
//! to local unitaries); they are pinned here so every derivation is
//! reproducible, and the corrected conditional states of the four accepted
//! patterns agree as density matrices.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::ensembles::{
    anti_stokes_mode, atomic_mode, memory_qubit_modes, retrieve, RetrievalParams,
};
use crate::linear_optics::{
    Branch, BranchEnsemble, DetectorModel, Ensemble, Field, ModeLabel, Occupation, OpticalElement,
    PureState, Site,
};
use crate::{Error, Result};

/// Detector name within a four-detector station.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DetectorId {
    D1,
    D2,
    D3,
    D4,
}

impl std::fmt::Display for DetectorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DetectorId::D1 => "D1",
            DetectorId::D2 => "D2",
            DetectorId::D3 => "D3",
            DetectorId::D4 => "D4",
        };
        f.write_str(s)
    }
}

/// One click pattern with its probability and conditional post state.
#[derive(Clone, Debug)]
pub struct DetectionOutcome {
    /// Counts per detector (0/1 for threshold detectors).
    pub pattern: BTreeMap<DetectorId, u32>,
    pub probability: f64,
    pub accepted: bool,
    /// Conditional state (normalized), restricted to the remaining memory
    /// modes. Not yet pattern-corrected.
    pub post_state: BranchEnsemble,
}

impl DetectionOutcome {
    /// The two clicked detectors, when exactly two clicked.
    pub fn clicked_pair(&self) -> Option<(DetectorId, DetectorId)> {
        let clicked: Vec<DetectorId> = self
            .pattern
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(d, _)| *d)
            .collect();
        (clicked.len() == 2).then(|| (clicked[0], clicked[1]))
    }
}

/// Which station produced an outcome; selects the correction table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StationKind {
    Generation,
    Swapping,
    Purification,
}

/// Local unitary applied to map an accepted pattern onto the canonical
/// (D1&D4) conditional state.
#[derive(Clone, Copy, Debug)]
pub enum CorrectionOp {
    /// Relabel the u and d atomic modes of a site.
    SwapUd(Site),
    /// Multiply amplitudes by e^(iθ·n) with n the site's total atomic
    /// excitation number.
    SitePhase(Site, f64),
    /// Multiply amplitudes by (−1)^n with n the site's d-mode excitation.
    FlipD(Site),
}

/// Correction table entry for an accepted detector pair.
pub fn pattern_correction(
    kind: StationKind,
    pair: (DetectorId, DetectorId),
    left: Site,
    right: Site,
) -> Vec<CorrectionOp> {
    use DetectorId::*;
    match kind {
        StationKind::Generation => match pair {
            (D1, D3) => vec![CorrectionOp::SwapUd(left)],
            (D2, D4) => vec![CorrectionOp::SwapUd(right)],
            (D2, D3) => vec![
                CorrectionOp::SitePhase(left, std::f64::consts::FRAC_PI_2),
                CorrectionOp::SitePhase(right, -std::f64::consts::FRAC_PI_2),
            ],
            _ => vec![],
        },
        StationKind::Swapping => match pair {
            (D1, D3) => vec![CorrectionOp::FlipD(left)],
            (D2, D4) => vec![CorrectionOp::FlipD(right)],
            (D2, D3) => vec![CorrectionOp::FlipD(left), CorrectionOp::FlipD(right)],
            _ => vec![],
        },
        StationKind::Purification => match pair {
            (D1, D3) => vec![CorrectionOp::FlipD(right)],
            (D2, D4) => vec![CorrectionOp::FlipD(left)],
            (D2, D3) => vec![CorrectionOp::FlipD(left), CorrectionOp::FlipD(right)],
            _ => vec![],
        },
    }
}

/// Apply a correction sequence to a conditional state.
pub fn apply_correction(state: &BranchEnsemble, ops: &[CorrectionOp]) -> Result<BranchEnsemble> {
    let mut out = state.clone();
    for op in ops {
        out = match *op {
            CorrectionOp::SwapUd(site) => {
                let u = atomic_mode(site, Ensemble::U);
                let d = atomic_mode(site, Ensemble::D);
                out.relabel_modes(&[(u, d), (d, u)])?
            }
            CorrectionOp::SitePhase(site, theta) => {
                let u = atomic_mode(site, Ensemble::U);
                let d = atomic_mode(site, Ensemble::D);
                out.scale_amplitudes(|modes, occ| {
                    let mut n = 0u32;
                    for (m, &k) in modes.iter().zip(occ) {
                        if *m == u || *m == d {
                            n += k as u32;
                        }
                    }
                    Complex64::from_polar(1.0, theta * n as f64)
                })
            }
            CorrectionOp::FlipD(site) => {
                let d = atomic_mode(site, Ensemble::D);
                out.scale_amplitudes(|modes, occ| {
                    let n: u32 = modes
                        .iter()
                        .zip(occ)
                        .filter(|(m, _)| **m == d)
                        .map(|(_, &k)| k as u32)
                        .sum();
                    Complex64::new(if n % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
                })
            }
        };
    }
    Ok(out)
}

fn is_cross_pair(a: DetectorId, b: DetectorId) -> bool {
    use DetectorId::*;
    matches!((a, b), (D1, D3) | (D1, D4) | (D2, D3) | (D2, D4))
}

fn accept(pattern: &BTreeMap<DetectorId, u32>, model: &DetectorModel) -> bool {
    let clicked: Vec<(DetectorId, u32)> = pattern
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(d, &c)| (*d, c))
        .collect();
    if clicked.len() != 2 {
        return false;
    }
    if model.number_resolving && clicked.iter().any(|(_, c)| *c != 1) {
        return false;
    }
    is_cross_pair(clicked[0].0, clicked[1].0)
}

/// Run detectors over the given modes (in D1…D4 order), then strip every
/// listed discardable mode (all vacuum after detection/read-out) from the
/// conditional states.
fn detect_and_strip(
    ens: &BranchEnsemble,
    detector_modes: [ModeLabel; 4],
    discard: &[ModeLabel],
    model: &DetectorModel,
) -> Result<Vec<DetectionOutcome>> {
    let ids = [
        DetectorId::D1,
        DetectorId::D2,
        DetectorId::D3,
        DetectorId::D4,
    ];
    let raw = ens.measure(&detector_modes, model)?;
    let mut outcomes = Vec::with_capacity(raw.len());
    for o in raw {
        let mut post = o.post;
        for m in discard {
            post = post.remove_mode(m)?;
        }
        let pattern: BTreeMap<DetectorId, u32> = ids
            .iter()
            .copied()
            .zip(detector_modes.iter().map(|m| o.pattern[m]))
            .collect();
        let accepted = accept(&pattern, model);
        outcomes.push(DetectionOutcome {
            pattern,
            probability: o.probability,
            accepted,
            post_state: post,
        });
    }
    Ok(outcomes)
}

/// Entanglement generation: the Stokes photons of two freshly written
/// memory qubits travel half a link each (per-photon transmittance
/// √`link_transmittance`), interfere on the PBS± and are detected in the
/// H/V basis. Conditional states live on the four atomic modes of the two
/// sites.
pub fn bsm1(
    state_a: &PureState,
    state_b: &PureState,
    link_transmittance: f64,
    model: &DetectorModel,
) -> Result<Vec<DetectionOutcome>> {
    if !(0.0..=1.0).contains(&link_transmittance) {
        return Err(Error::OutOfRange {
            name: "link_transmittance",
            value: link_transmittance,
        });
    }
    let site_of = |s: &PureState| -> Result<Site> {
        let site = s
            .modes()
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty memory-qubit state".into()))?
            .site;
        let mut expected = memory_qubit_modes(site).to_vec();
        expected.sort();
        if s.modes() != expected.as_slice() {
            return Err(Error::InvalidArgument(format!(
                "state is not a memory qubit at site {site}"
            )));
        }
        Ok(site)
    };
    let site_a = site_of(state_a)?;
    let site_b = site_of(state_b)?;
    if site_a == site_b {
        return Err(Error::InvalidArgument(
            "memory qubits must be at distinct sites".into(),
        ));
    }

    let photon_modes = [
        crate::ensembles::stokes_mode(site_a, Ensemble::U), // slot1 H
        crate::ensembles::stokes_mode(site_a, Ensemble::D), // slot1 V
        crate::ensembles::stokes_mode(site_b, Ensemble::U), // slot2 H
        crate::ensembles::stokes_mode(site_b, Ensemble::D), // slot2 V
    ];

    let mut ens = BranchEnsemble::from_pure(state_a.tensor(state_b)?.normalized());
    let arm = link_transmittance.sqrt();
    for m in &photon_modes {
        ens = ens.loss_channel(m, arm)?;
    }
    ens = ens.apply_element(&OpticalElement::pbs_pm(), &photon_modes)?;

    // D1 = slot1·H, D2 = slot1·V, D3 = slot2·V, D4 = slot2·H.
    let detector_modes = [
        photon_modes[0],
        photon_modes[1],
        photon_modes[3],
        photon_modes[2],
    ];
    detect_and_strip(&ens, detector_modes, &photon_modes, model)
}

/// Entanglement swapping: the memory qubits at `site_b` and `site_c` are
/// read out, each anti-Stokes photon traverses one station arm
/// (transmittance `arm_transmittance`), the photons pass the H/V PBS and
/// are detected in the ±45° basis. Conditional states live on the two
/// remaining (outer) sites.
pub fn bsm2(
    joint: &BranchEnsemble,
    site_b: Site,
    site_c: Site,
    arm_transmittance: f64,
    retrieval: &RetrievalParams,
    model: &DetectorModel,
) -> Result<Vec<DetectionOutcome>> {
    if !(0.0..=1.0).contains(&arm_transmittance) {
        return Err(Error::OutOfRange {
            name: "arm_transmittance",
            value: arm_transmittance,
        });
    }
    let modes = joint.modes().to_vec();
    let mut sites: Vec<Site> = Vec::new();
    for m in &modes {
        if m.field != Field::Atomic {
            return Err(Error::InvalidArgument(
                "swap input must hold atomic modes only".into(),
            ));
        }
        if !sites.contains(&m.site) {
            sites.push(m.site);
        }
    }
    sites.sort();
    if sites.len() != 4 || !sites.contains(&site_b) || !sites.contains(&site_c) {
        return Err(Error::InvalidArgument(
            "swap input must span four sites including the two read-out sites".into(),
        ));
    }

    // Read out both ensembles of both middle qubits. The station arm is a
    // second loss in series with the retrieval loss; consecutive
    // beam-splitter losses compose multiplicatively.
    let combined = RetrievalParams::new(retrieval.eta_r * arm_transmittance)?;
    let mut ens = joint.clone();
    for site in [site_b, site_c] {
        for e in [Ensemble::U, Ensemble::D] {
            let atomic = atomic_mode(site, e);
            let anti = anti_stokes_mode(site, e);
            ens = retrieve(&ens, &atomic, anti, &combined)?;
        }
    }

    let photon_modes = [
        anti_stokes_mode(site_b, Ensemble::U), // slot1 H
        anti_stokes_mode(site_b, Ensemble::D), // slot1 V
        anti_stokes_mode(site_c, Ensemble::U), // slot2 H
        anti_stokes_mode(site_c, Ensemble::D), // slot2 V
    ];
    ens = ens.apply_element(&OpticalElement::pbs_hv(), &photon_modes)?;
    for slot in [&photon_modes[0..2], &photon_modes[2..4]] {
        ens = ens.apply_element(&OpticalElement::rotation_pm(), slot)?;
    }

    // D1 = slot1·+, D2 = slot1·−, D3 = slot2·−, D4 = slot2·+.
    let detector_modes = [
        photon_modes[0],
        photon_modes[1],
        photon_modes[3],
        photon_modes[2],
    ];
    let mut discard = photon_modes.to_vec();
    for site in [site_b, site_c] {
        for e in [Ensemble::U, Ensemble::D] {
            discard.push(atomic_mode(site, e));
        }
    }
    detect_and_strip(&ens, detector_modes, &discard, model)
}

/// Coarse-grained description of a two-site memory pair.
///
/// p₂: exactly one excitation at each site (entangled sector, with its
/// fidelity to |φ⁺⟩); p₁: one excitation total; p₀: vacuum; p_h:
/// everything else (higher or lopsided configurations).
#[derive(Clone, Copy, Debug)]
pub struct PairState {
    pub p2: f64,
    pub p1: f64,
    pub p0: f64,
    pub ph: f64,
    /// Fidelity of the normalized entangled sector to |φ⁺⟩; 0 if p₂ = 0.
    pub fidelity: f64,
    /// Number of elementary links covered by the pair.
    pub span: u64,
}

impl PairState {
    pub fn coefficient_sum(&self) -> f64 {
        self.p2 + self.p1 + self.p0 + self.ph
    }

    /// A pure |φ⁺⟩ pair spanning one link.
    pub fn ideal() -> Self {
        PairState {
            p2: 1.0,
            p1: 0.0,
            p0: 0.0,
            ph: 0.0,
            fidelity: 1.0,
            span: 1,
        }
    }

    pub fn empty() -> Self {
        PairState {
            p2: 0.0,
            p1: 0.0,
            p0: 0.0,
            ph: 0.0,
            fidelity: 0.0,
            span: 1,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sector {
    Entangled,
    Single,
    Vacuum,
    Higher,
}

fn sector_of(occ: &[u8], x_idx: &[usize], y_idx: &[usize]) -> Sector {
    let nx: u32 = x_idx.iter().map(|&i| occ[i] as u32).sum();
    let ny: u32 = y_idx.iter().map(|&i| occ[i] as u32).sum();
    match (nx, ny) {
        (1, 1) => Sector::Entangled,
        (1, 0) | (0, 1) => Sector::Single,
        (0, 0) => Sector::Vacuum,
        _ => Sector::Higher,
    }
}

fn pair_mode_indices(ens: &BranchEnsemble, x: Site, y: Site) -> Result<([usize; 2], [usize; 2])> {
    let modes = ens.modes();
    let mut expected = vec![
        atomic_mode(x, Ensemble::U),
        atomic_mode(x, Ensemble::D),
        atomic_mode(y, Ensemble::U),
        atomic_mode(y, Ensemble::D),
    ];
    expected.sort();
    if modes != expected.as_slice() {
        return Err(Error::InvalidArgument(format!(
            "state is not a memory pair over sites {x} and {y}"
        )));
    }
    let find = |m: ModeLabel| modes.iter().position(|v| *v == m).unwrap();
    Ok((
        [
            find(atomic_mode(x, Ensemble::U)),
            find(atomic_mode(x, Ensemble::D)),
        ],
        [
            find(atomic_mode(y, Ensemble::U)),
            find(atomic_mode(y, Ensemble::D)),
        ],
    ))
}

/// Project onto the excitation-number sectors and report the
/// coarse-grained pair coefficients. Exact: sector coherences cannot
/// influence any later detection, so counting sector weights per branch is
/// an equivalent unraveling.
pub fn classify(post: &BranchEnsemble, x: Site, y: Site) -> Result<PairState> {
    let (x_idx, y_idx) = pair_mode_indices(post, x, y)?;
    let total = post.total_weight();
    if total <= 0.0 {
        return Ok(PairState::empty());
    }
    let target = bell_phi_plus(x, y, post.branches()[0].state.n_max())?;
    let mut w = [0.0f64; 4];
    let mut overlap = 0.0f64;
    for b in post.branches() {
        for (k, a) in b.state.iter() {
            let p = b.weight * a.norm_sqr();
            match sector_of(k, &x_idx, &y_idx) {
                Sector::Entangled => w[0] += p,
                Sector::Single => w[1] += p,
                Sector::Vacuum => w[2] += p,
                Sector::Higher => w[3] += p,
            }
        }
        overlap += b.weight * target.inner(&b.state)?.norm_sqr();
    }
    let p2 = w[0] / total;
    let fidelity = if p2 > 0.0 {
        (overlap / total / p2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(PairState {
        p2,
        p1: w[1] / total,
        p0: w[2] / total,
        ph: w[3] / total,
        fidelity,
        span: 1,
    })
}

/// Weights of the four single-excitation configurations (u/d at each
/// site) as fractions of the total weight; their sum is p₁.
pub fn single_excitation_weights(post: &BranchEnsemble, x: Site, y: Site) -> Result<[f64; 4]> {
    let (x_idx, y_idx) = pair_mode_indices(post, x, y)?;
    let order = [x_idx[0], x_idx[1], y_idx[0], y_idx[1]];
    let total = post.total_weight();
    let mut w = [0.0f64; 4];
    for b in post.branches() {
        for (k, a) in b.state.iter() {
            if sector_of(k, &x_idx, &y_idx) != Sector::Single {
                continue;
            }
            for (slot, &i) in order.iter().enumerate() {
                if k[i] == 1 {
                    w[slot] += b.weight * a.norm_sqr();
                }
            }
        }
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// |φ⁺⟩ = (S†ᵤₓS†ᵤᵧ + S†dₓS†dᵧ)/√2 |vac⟩ over the four atomic modes.
pub fn bell_phi_plus(x: Site, y: Site, n_max: u32) -> Result<PureState> {
    bell_pair(x, y, n_max, false)
}

/// |ψ⁺⟩ = (S†ᵤₓS†dᵧ + S†dₓS†ᵤᵧ)/√2 |vac⟩ over the four atomic modes.
pub fn bell_psi_plus(x: Site, y: Site, n_max: u32) -> Result<PureState> {
    bell_pair(x, y, n_max, true)
}

fn bell_pair(x: Site, y: Site, n_max: u32, flipped: bool) -> Result<PureState> {
    let modes = [
        atomic_mode(x, Ensemble::U),
        atomic_mode(x, Ensemble::D),
        atomic_mode(y, Ensemble::U),
        atomic_mode(y, Ensemble::D),
    ];
    let vac = PureState::vacuum(&modes, n_max)?;
    let (first_y, second_y) = if flipped {
        (modes[3], modes[2])
    } else {
        (modes[2], modes[3])
    };
    let t1 = vac.apply_creation(&modes[0])?.apply_creation(&first_y)?;
    let t2 = vac.apply_creation(&modes[1])?.apply_creation(&second_y)?;
    Ok(sum_states(&t1, &t2)?.normalized())
}

fn sum_states(a: &PureState, b: &PureState) -> Result<PureState> {
    if a.modes() != b.modes() {
        return Err(Error::ModeMismatch);
    }
    let mut amps: BTreeMap<Occupation, Complex64> =
        a.iter().map(|(k, v)| (k.clone(), *v)).collect();
    for (k, v) in b.iter() {
        *amps.entry(k.clone()).or_insert(Complex64::default()) += *v;
    }
    Ok(PureState::from_parts(a.modes().to_vec(), a.n_max(), amps))
}

/// Entangled sector of the canonical heralded link, with its 1/2 weights:
/// (S†ᵤₐS†ᵤᵦ + S†dₐS†dᵦ)/2 on vacuum.
pub fn link_entangled_part(a: Site, b: Site, n_max: u32) -> Result<PureState> {
    Ok(bell_phi_plus(a, b, n_max)?.scaled(Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)))
}

/// Two-excitation (spurious) sector of the canonical heralded link:
/// (S†ᵤₐ² + S†ᵤᵦ² − S†dₐ² − S†dᵦ²)/4 on vacuum.
pub fn link_two_excitation_part(a: Site, b: Site, n_max: u32) -> Result<PureState> {
    let modes = [
        atomic_mode(a, Ensemble::U),
        atomic_mode(a, Ensemble::D),
        atomic_mode(b, Ensemble::U),
        atomic_mode(b, Ensemble::D),
    ];
    let vac = PureState::vacuum(&modes, n_max)?;
    let mut amps: BTreeMap<Occupation, Complex64> = BTreeMap::new();
    for (mode, sign) in [
        (modes[0], 1.0),
        (modes[2], 1.0),
        (modes[1], -1.0),
        (modes[3], -1.0),
    ] {
        let term = vac
            .apply_creation(&mode)?
            .apply_creation(&mode)?
            .scaled(Complex64::new(0.25 * sign, 0.0));
        for (k, v) in term.iter() {
            *amps.entry(k.clone()).or_insert(Complex64::default()) += *v;
        }
    }
    Ok(PureState::from_parts(modes.to_vec(), n_max, amps))
}

/// The canonical heralded link: entangled part plus two-excitation part.
/// With the 1/2 and 1/4 weights this state is exactly normalized.
pub fn canonical_link_state(a: Site, b: Site, n_max: u32) -> Result<PureState> {
    sum_states(
        &link_entangled_part(a, b, n_max)?,
        &link_two_excitation_part(a, b, n_max)?,
    )
}

/// Entangled pair dephased to fidelity F:
/// F·|φ⁺⟩⟨φ⁺| + (1−F)·|ψ⁺⟩⟨ψ⁺| as a two-branch ensemble.
pub fn dephased_pair(f: f64, x: Site, y: Site, n_max: u32) -> Result<BranchEnsemble> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::OutOfRange {
            name: "fidelity",
            value: f,
        });
    }
    Ok(BranchEnsemble::from_branches(vec![
        Branch {
            weight: f,
            state: bell_phi_plus(x, y, n_max)?,
        },
        Branch {
            weight: 1.0 - f,
            state: bell_psi_plus(x, y, n_max)?,
        },
    ]))
}

/// Microstate realization of a coarse-grained pair: dephased entangled
/// sector, equal-weight single-excitation sector, vacuum sector. Requires
/// p_h ≈ 0 (the higher sector has no canonical microstate).
pub fn pair_ensemble(pair: &PairState, x: Site, y: Site, n_max: u32) -> Result<BranchEnsemble> {
    if pair.ph > 1e-9 {
        return Err(Error::InvalidArgument(
            "cannot embed a pair with a nonzero higher-order sector".into(),
        ));
    }
    let modes = [
        atomic_mode(x, Ensemble::U),
        atomic_mode(x, Ensemble::D),
        atomic_mode(y, Ensemble::U),
        atomic_mode(y, Ensemble::D),
    ];
    let vac = PureState::vacuum(&modes, n_max)?;
    let mut branches = vec![
        Branch {
            weight: pair.p2 * pair.fidelity,
            state: bell_phi_plus(x, y, n_max)?,
        },
        Branch {
            weight: pair.p2 * (1.0 - pair.fidelity),
            state: bell_psi_plus(x, y, n_max)?,
        },
        Branch {
            weight: pair.p0,
            state: vac.clone(),
        },
    ];
    for m in modes {
        branches.push(Branch {
            weight: pair.p1 / 4.0,
            state: vac.apply_creation(&m)?,
        });
    }
    Ok(BranchEnsemble::from_branches(branches))
}

/// Replace the entangled sector of a two-site memory state by the
/// dephased F·φ⁺/(1−F)·ψ⁺ mixture of the same total weight, leaving the
/// other sectors untouched. Sector splitting is exact (sector coherences
/// are invisible to all later detections).
pub fn dephase_entangled_sector(
    ens: &BranchEnsemble,
    x: Site,
    y: Site,
    f: f64,
) -> Result<BranchEnsemble> {
    let (x_idx, y_idx) = pair_mode_indices(ens, x, y)?;
    let n_max = ens.branches()[0].state.n_max();
    let mut rest = Vec::new();
    let mut w2 = 0.0;
    for b in ens.branches() {
        let mut ent: BTreeMap<Occupation, Complex64> = BTreeMap::new();
        let mut other: BTreeMap<Occupation, Complex64> = BTreeMap::new();
        for (k, a) in b.state.iter() {
            if sector_of(k, &x_idx, &y_idx) == Sector::Entangled {
                ent.insert(k.clone(), *a);
            } else {
                other.insert(k.clone(), *a);
            }
        }
        let ent_state = PureState::from_parts(ens.modes().to_vec(), n_max, ent);
        w2 += b.weight * ent_state.norm_sqr();
        let other_state = PureState::from_parts(ens.modes().to_vec(), n_max, other);
        let w = b.weight * other_state.norm_sqr();
        if w > 0.0 {
            rest.push(Branch {
                weight: w,
                state: other_state.normalized(),
            });
        }
    }
    rest.push(Branch {
        weight: w2 * f,
        state: bell_phi_plus(x, y, n_max)?,
    });
    rest.push(Branch {
        weight: w2 * (1.0 - f),
        state: bell_psi_plus(x, y, n_max)?,
    });
    Ok(BranchEnsemble::from_branches(rest))
}

/// Merge the accepted outcomes of a station into the canonical conditional
/// state: each accepted pattern is corrected onto the D1&D4 form, the
/// corrected states are mixed with their pattern probabilities, and the
/// result is compressed. Returns (total accepted probability, state).
pub fn accepted_merge(
    outcomes: &[DetectionOutcome],
    kind: StationKind,
    left: Site,
    right: Site,
) -> Result<(f64, Option<BranchEnsemble>)> {
    let mut p_total = 0.0;
    let mut branches = Vec::new();
    for o in outcomes {
        if !o.accepted {
            continue;
        }
        let pair = o
            .clicked_pair()
            .ok_or_else(|| Error::InvalidArgument("accepted outcome without a pair".into()))?;
        let corrected =
            apply_correction(&o.post_state, &pattern_correction(kind, pair, left, right))?;
        p_total += o.probability;
        for b in corrected.normalized().branches() {
            branches.push(Branch {
                weight: b.weight * o.probability,
                state: b.state.clone(),
            });
        }
    }
    if branches.is_empty() {
        return Ok((0.0, None));
    }
    let merged = BranchEnsemble::from_branches(branches)
        .normalized()
        .compress()?;
    Ok((p_total, Some(merged)))
}

/// Result of one purification round.
#[derive(Clone, Debug)]
pub struct PurifyOutput {
    pub outcomes: Vec<DetectionOutcome>,
    /// Total probability of the accepted coincidences.
    pub success_probability: f64,
    /// Restored memory state over the two sites (accepted patterns merged
    /// and corrected), normalized. Empty if nothing is accepted.
    pub state: BranchEnsemble,
    pub pair: PairState,
}

/// Purification of two pairs held between the same two sites.
///
/// All four memory qubits are read out; at each site the two photons meet
/// on a PBS whose reflected slot is detected in the ±45° basis while the
/// transmitted slot is restored into the memory. Accepted coincidences
/// (one detector per site, the usual cross-pair rule) keep the restored
/// pair; the D1&D3 / D2&D4 patterns receive a d-phase flip at the right
/// site.
pub fn purify(
    pair1: &BranchEnsemble,
    pair2: &BranchEnsemble,
    retrieval: &RetrievalParams,
    model: &DetectorModel,
) -> Result<PurifyOutput> {
    let sites_of = |e: &BranchEnsemble| -> Result<(Site, Site)> {
        let modes = e.modes();
        let mut sites: Vec<Site> = Vec::new();
        for m in modes {
            if m.field != Field::Atomic {
                return Err(Error::InvalidArgument(
                    "purification input must hold atomic modes only".into(),
                ));
            }
            if !sites.contains(&m.site) {
                sites.push(m.site);
            }
        }
        sites.sort();
        if sites.len() != 2 {
            return Err(Error::InvalidArgument(
                "purification input must span exactly two sites".into(),
            ));
        }
        Ok((sites[0], sites[1]))
    };
    let (x, y) = sites_of(pair1)?;
    if sites_of(pair2)? != (x, y) {
        return Err(Error::InvalidArgument(
            "purification inputs must connect the same two sites".into(),
        ));
    }
    // The second pair is carried on auxiliary qubit slots co-located with
    // the two sites.
    let (aux_x, aux_y) = (Site::G, Site::H);
    if [x, y].iter().any(|s| *s == aux_x || *s == aux_y) {
        return Err(Error::InvalidArgument(
            "sites G and H are reserved for purification aux slots".into(),
        ));
    }
    let relabel: Vec<(ModeLabel, ModeLabel)> = [Ensemble::U, Ensemble::D]
        .iter()
        .flat_map(|&e| {
            [
                (atomic_mode(x, e), atomic_mode(aux_x, e)),
                (atomic_mode(y, e), atomic_mode(aux_y, e)),
            ]
        })
        .collect();
    let pair2_aux = pair2.relabel_modes(&relabel)?;
    let mut ens = pair1.tensor(&pair2_aux)?;

    // Read out all four qubits.
    for site in [x, y, aux_x, aux_y] {
        for e in [Ensemble::U, Ensemble::D] {
            ens = retrieve(&ens, &atomic_mode(site, e), anti_stokes_mode(site, e), retrieval)?;
        }
    }
    // Per-site PBS: transmitted photons stay on the primary slot (kept),
    // reflected ones land on the auxiliary slot (detected in ±).
    for (main, aux) in [(x, aux_x), (y, aux_y)] {
        let slot = [
            anti_stokes_mode(main, Ensemble::U),
            anti_stokes_mode(main, Ensemble::D),
            anti_stokes_mode(aux, Ensemble::U),
            anti_stokes_mode(aux, Ensemble::D),
        ];
        ens = ens.apply_element(&OpticalElement::pbs_hv(), &slot)?;
        ens = ens.apply_element(&OpticalElement::rotation_pm(), &[slot[2], slot[3]])?;
    }

    let detector_modes = [
        anti_stokes_mode(aux_x, Ensemble::U), // b1·+
        anti_stokes_mode(aux_x, Ensemble::D), // b1·−
        anti_stokes_mode(aux_y, Ensemble::D), // b2·−
        anti_stokes_mode(aux_y, Ensemble::U), // b2·+
    ];
    // Discard detected photon modes and all (now empty) atomic modes of
    // the read-out qubits, then restore the kept photons as memory.
    let mut discard: Vec<ModeLabel> = detector_modes.to_vec();
    for site in [x, y, aux_x, aux_y] {
        for e in [Ensemble::U, Ensemble::D] {
            discard.push(atomic_mode(site, e));
        }
    }
    let raw = detect_and_strip(&ens, detector_modes, &discard, model)?;
    let restore: Vec<(ModeLabel, ModeLabel)> = [x, y]
        .iter()
        .flat_map(|&s| {
            [Ensemble::U, Ensemble::D].map(|e| (anti_stokes_mode(s, e), atomic_mode(s, e)))
        })
        .collect();
    let mut outcomes = Vec::with_capacity(raw.len());
    for o in raw {
        outcomes.push(DetectionOutcome {
            post_state: o.post_state.relabel_modes(&restore)?,
            ..o
        });
    }

    let (p, merged) = accepted_merge(&outcomes, StationKind::Purification, x, y)?;
    let (state, pair) = match merged {
        Some(s) => {
            let pair = classify(&s, x, y)?;
            (s, pair)
        }
        None => (BranchEnsemble::from_branches(Vec::new()), PairState::empty()),
    };
    Ok(PurifyOutput {
        outcomes,
        success_probability: p,
        state,
        pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{write_memory_qubit, EnsembleParams};
    use crate::oracle;

    fn ideal() -> DetectorModel {
        DetectorModel::ideal()
    }

    fn qubit(site: Site, chi: f64, n_max: u32) -> PureState {
        write_memory_qubit(&EnsembleParams::new(chi, 2).unwrap(), site, n_max).unwrap()
    }

    fn d(n: u8) -> DetectorId {
        match n {
            1 => DetectorId::D1,
            2 => DetectorId::D2,
            3 => DetectorId::D3,
            _ => DetectorId::D4,
        }
    }

    fn find_pattern(
        outcomes: &[DetectionOutcome],
        a: DetectorId,
        b: DetectorId,
    ) -> &DetectionOutcome {
        outcomes
            .iter()
            .find(|o| {
                o.accepted
                    && o.clicked_pair()
                        .map(|(x, y)| (x, y) == (a, b))
                        .unwrap_or(false)
            })
            .expect("accepted pattern present")
    }

    #[test]
    fn bsm1_ideal_reproduces_canonical_link() {
        let outcomes = bsm1(
            &qubit(Site::A, 0.01, 4),
            &qubit(Site::B, 0.01, 4),
            1.0,
            &ideal(),
        )
        .unwrap();
        let o = find_pattern(&outcomes, DetectorId::D1, DetectorId::D4);
        assert_eq!(o.post_state.branches().len(), 1);
        let got = o.post_state.branches()[0].state.canonical_phase();
        let want = canonical_link_state(Site::A, Site::B, 4)
            .unwrap()
            .canonical_phase();
        assert!(
            got.max_amp_diff(&want).unwrap() < 1e-10,
            "conditional state deviates from the canonical link"
        );
    }

    #[test]
    fn bsm1_acceptance_scales_as_chi_squared() {
        let accepted_prob = |chi: f64| -> f64 {
            bsm1(
                &qubit(Site::A, chi, 4),
                &qubit(Site::B, chi, 4),
                1.0,
                &ideal(),
            )
            .unwrap()
            .iter()
            .filter(|o| o.accepted)
            .map(|o| o.probability)
            .sum()
        };
        let p3 = accepted_prob(1e-3);
        let p4 = accepted_prob(1e-4);
        // O(χ²): one decade in χ is two decades in probability.
        assert!((p3 / p4 / 100.0 - 1.0).abs() < 0.01);
        // Derived prefactor: 4 accepted patterns, each of weight χ².
        assert!((p4 / (4.0 * 1e-8) - 1.0).abs() < 0.01);
    }

    #[test]
    fn bsm1_patterns_symmetric_and_correctable() {
        let outcomes = bsm1(
            &qubit(Site::A, 0.02, 4),
            &qubit(Site::B, 0.02, 4),
            0.8,
            &DetectorModel::threshold(0.95).unwrap(),
        )
        .unwrap();
        let accepted: Vec<&DetectionOutcome> = outcomes.iter().filter(|o| o.accepted).collect();
        assert_eq!(accepted.len(), 4);
        let p0 = accepted[0].probability;
        for o in &accepted {
            assert!(
                (o.probability - p0).abs() < 1e-10,
                "pattern probabilities differ"
            );
        }
        // After correction, all accepted conditional states agree as
        // density matrices.
        let basis = oracle::Basis::new(accepted[0].post_state.modes(), 4).unwrap();
        let reference = basis
            .density_matrix(&find_pattern(&outcomes, d(1), d(4)).post_state)
            .unwrap();
        for (a, b) in [(1u8, 3u8), (2, 3), (2, 4)] {
            let o = find_pattern(&outcomes, d(a), d(b));
            let corrected = apply_correction(
                &o.post_state,
                &pattern_correction(StationKind::Generation, (d(a), d(b)), Site::A, Site::B),
            )
            .unwrap();
            let rho = basis.density_matrix(&corrected).unwrap();
            assert!(
                oracle::max_diff(&rho, &reference) < 1e-10,
                "pattern ({a},{b}) disagrees after correction"
            );
        }
    }

    #[test]
    fn bsm1_rejects_wrong_mode_structure() {
        let a = qubit(Site::A, 0.01, 4);
        assert!(bsm1(&a, &a, 1.0, &ideal()).is_err());
        let bare = PureState::vacuum(&[atomic_mode(Site::B, Ensemble::U)], 4).unwrap();
        assert!(bsm1(&a, &bare, 1.0, &ideal()).is_err());
    }

    fn ideal_links_joint(n_max: u32) -> BranchEnsemble {
        let ab = canonical_link_state(Site::A, Site::B, n_max).unwrap();
        let cd = canonical_link_state(Site::C, Site::D, n_max).unwrap();
        BranchEnsemble::from_pure(ab.tensor(&cd).unwrap().normalized())
    }

    #[test]
    fn bsm2_ideal_projects_onto_phi_plus() {
        let joint = ideal_links_joint(4);
        let outcomes = bsm2(
            &joint,
            Site::B,
            Site::C,
            1.0,
            &RetrievalParams::new(1.0).unwrap(),
            &ideal(),
        )
        .unwrap();
        let o = find_pattern(&outcomes, DetectorId::D1, DetectorId::D4);
        let target = bell_phi_plus(Site::A, Site::D, 4).unwrap();
        let f = o.post_state.fidelity(&target).unwrap();
        assert!(f > 1.0 - 1e-10, "fidelity to |φ⁺⟩ is {f}");
        let pair = classify(&o.post_state, Site::A, Site::D).unwrap();
        assert!((pair.p2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bsm2_two_excitation_terms_never_accepted_ideally() {
        // Feed only spurious two-excitation sectors through the station,
        // in every combination with the full link, and demand zero
        // accepted probability with ideal detectors.
        let full = |x, y| canonical_link_state(x, y, 4).unwrap();
        let spur = |x, y| link_two_excitation_part(x, y, 4).unwrap().normalized();
        let combos = [
            (spur(Site::A, Site::B), full(Site::C, Site::D)),
            (full(Site::A, Site::B), spur(Site::C, Site::D)),
            (spur(Site::A, Site::B), spur(Site::C, Site::D)),
        ];
        for (ab, cd) in combos {
            let joint = BranchEnsemble::from_pure(ab.tensor(&cd).unwrap().normalized());
            let outcomes = bsm2(
                &joint,
                Site::B,
                Site::C,
                1.0,
                &RetrievalParams::new(1.0).unwrap(),
                &ideal(),
            )
            .unwrap();
            let p: f64 = outcomes
                .iter()
                .filter(|o| o.accepted)
                .map(|o| o.probability)
                .sum();
            assert!(p < 1e-12, "two-excitation terms produced coincidences: {p}");
        }
    }

    #[test]
    fn bsm2_pattern_symmetry_and_corrections() {
        let joint = ideal_links_joint(4);
        let outcomes = bsm2(
            &joint,
            Site::B,
            Site::C,
            0.9,
            &RetrievalParams::new(0.98).unwrap(),
            &DetectorModel::threshold(0.99).unwrap(),
        )
        .unwrap();
        let accepted: Vec<&DetectionOutcome> = outcomes.iter().filter(|o| o.accepted).collect();
        assert_eq!(accepted.len(), 4);
        let p0 = accepted[0].probability;
        for o in &accepted {
            assert!((o.probability - p0).abs() < 1e-10);
        }
        let basis = oracle::Basis::new(accepted[0].post_state.modes(), 4).unwrap();
        let mut rhos = Vec::new();
        for o in &accepted {
            let pair = o.clicked_pair().unwrap();
            let corrected = apply_correction(
                &o.post_state,
                &pattern_correction(StationKind::Swapping, pair, Site::A, Site::D),
            )
            .unwrap();
            rhos.push(basis.density_matrix(&corrected).unwrap());
        }
        for r in &rhos[1..] {
            assert!(
                oracle::max_diff(r, &rhos[0]) < 1e-10,
                "corrected swap outputs differ"
            );
        }
    }

    #[test]
    fn classify_examples() {
        let n_max = 4;
        let phi = BranchEnsemble::from_pure(bell_phi_plus(Site::A, Site::D, n_max).unwrap());
        let p = classify(&phi, Site::A, Site::D).unwrap();
        assert!((p.p2 - 1.0).abs() < 1e-12);
        assert!((p.fidelity - 1.0).abs() < 1e-12);
        assert!((p.coefficient_sum() - 1.0).abs() < 1e-9);

        let modes = [
            atomic_mode(Site::A, Ensemble::U),
            atomic_mode(Site::A, Ensemble::D),
            atomic_mode(Site::D, Ensemble::U),
            atomic_mode(Site::D, Ensemble::D),
        ];
        let vac = BranchEnsemble::from_pure(PureState::vacuum(&modes, n_max).unwrap());
        let p = classify(&vac, Site::A, Site::D).unwrap();
        assert!((p.p0 - 1.0).abs() < 1e-12);
        assert_eq!(p.fidelity, 0.0);
    }

    #[test]
    fn classify_is_a_partition() {
        let n_max = 4;
        let modes = [
            atomic_mode(Site::A, Ensemble::U),
            atomic_mode(Site::A, Ensemble::D),
            atomic_mode(Site::D, Ensemble::U),
            atomic_mode(Site::D, Ensemble::D),
        ];
        let vac = PureState::vacuum(&modes, n_max).unwrap();
        let single = vac.apply_creation(&modes[2]).unwrap();
        let double = single.apply_creation(&modes[2]).unwrap().normalized();
        let ens = BranchEnsemble::from_branches(vec![
            Branch {
                weight: 0.3,
                state: bell_phi_plus(Site::A, Site::D, n_max).unwrap(),
            },
            Branch {
                weight: 0.3,
                state: single,
            },
            Branch {
                weight: 0.2,
                state: double,
            },
            Branch {
                weight: 0.2,
                state: vac,
            },
        ]);
        let p = classify(&ens, Site::A, Site::D).unwrap();
        assert!((p.coefficient_sum() - 1.0).abs() < 1e-9);
        assert!((p.p2 - 0.3).abs() < 1e-12);
        assert!((p.p1 - 0.3).abs() < 1e-12);
        assert!((p.ph - 0.2).abs() < 1e-12);
        assert!((p.p0 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn purify_fixed_points_and_map() {
        let retrieval = RetrievalParams::new(1.0).unwrap();
        for (f, want) in [(1.0, 1.0), (0.5, 0.5), (0.88, 0.7744 / 0.7888)] {
            let pair1 = dephased_pair(f, Site::A, Site::D, 4).unwrap();
            let pair2 = dephased_pair(f, Site::A, Site::D, 4).unwrap();
            let out = purify(&pair1, &pair2, &retrieval, &ideal()).unwrap();
            assert!(
                (out.pair.fidelity - want).abs() < 1e-9,
                "F={f}: got {}, want {want}",
                out.pair.fidelity
            );
            // Ideal detection: post-selected output is purely entangled.
            assert!((out.pair.p2 - 1.0).abs() < 1e-10);
            // Success probability: (F² + (1−F)²)/2 with ideal detectors.
            let expect_p = (f * f + (1.0 - f) * (1.0 - f)) / 2.0;
            assert!((out.success_probability - expect_p).abs() < 1e-10);
        }
    }

    #[test]
    fn purify_patterns_agree_after_correction_with_realistic_detection() {
        // Inputs with vacuum and single-excitation admixtures, read out
        // with lossy threshold detectors: the four accepted patterns must
        // still merge consistently.
        let pair = PairState {
            p2: 0.7,
            p1: 0.2,
            p0: 0.1,
            ph: 0.0,
            fidelity: 0.88,
            span: 1,
        };
        let input = pair_ensemble(&pair, Site::A, Site::D, 4).unwrap();
        let out = purify(
            &input,
            &input,
            &RetrievalParams::new(0.98).unwrap(),
            &DetectorModel::threshold(0.99).unwrap(),
        )
        .unwrap();
        let accepted: Vec<&DetectionOutcome> =
            out.outcomes.iter().filter(|o| o.accepted).collect();
        assert_eq!(accepted.len(), 4);
        let basis = oracle::Basis::new(accepted[0].post_state.modes(), 4).unwrap();
        let mut rhos = Vec::new();
        for o in &accepted {
            let corrected = apply_correction(
                &o.post_state,
                &pattern_correction(
                    StationKind::Purification,
                    o.clicked_pair().unwrap(),
                    Site::A,
                    Site::D,
                ),
            )
            .unwrap();
            rhos.push(basis.density_matrix(&corrected).unwrap());
            assert!((o.probability - accepted[0].probability).abs() < 1e-10);
        }
        for r in &rhos[1..] {
            assert!(
                oracle::max_diff(r, &rhos[0]) < 1e-10,
                "corrected purification outputs differ"
            );
        }
    }

    #[test]
    fn purify_rejects_mismatched_sites() {
        let p1 = dephased_pair(0.9, Site::A, Site::D, 4).unwrap();
        let p2 = dephased_pair(0.9, Site::A, Site::B, 4).unwrap();
        assert!(purify(&p1, &p2, &RetrievalParams::new(1.0).unwrap(), &ideal()).is_err());
    }

    #[test]
    fn canonical_link_state_is_normalized() {
        let s = canonical_link_state(Site::A, Site::B, 4).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }
}

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{element::OpticalElement, state::Occupation, DetectorModel, ModeLabel, PureState};
use crate::{Error, Result};

/// Weight threshold below which a branch is dropped outright. Kept far
/// below any physically meaningful weight (χ⁴ at χ = 10⁻³ is 10⁻¹²).
const BRANCH_PRUNE: f64 = 1e-24;

/// One pure component of a mixed state, with its probability weight.
#[derive(Clone, Debug)]
pub struct Branch {
    pub weight: f64,
    pub state: PureState,
}

/// Weighted ensemble of normalized pure states.
///
/// Weights sum to 1 when every loss/measurement outcome is retained;
/// conditional (post-selected) ensembles are renormalized to total weight 1
/// with the selection probability reported separately.
#[derive(Clone, Debug)]
pub struct BranchEnsemble {
    branches: Vec<Branch>,
}

/// Result of measuring a set of detector modes: the click pattern, its
/// probability, and the conditional post-measurement state with the
/// detected modes reset to vacuum.
#[derive(Clone, Debug)]
pub struct MeasurementOutcome {
    pub pattern: BTreeMap<ModeLabel, u32>,
    pub probability: f64,
    pub post: BranchEnsemble,
}

impl BranchEnsemble {
    pub fn from_pure(state: PureState) -> Self {
        let norm = state.norm_sqr();
        BranchEnsemble {
            branches: vec![Branch {
                weight: norm,
                state: state.normalized(),
            }],
        }
    }

    pub fn from_branches(branches: Vec<Branch>) -> Self {
        let mut e = BranchEnsemble { branches };
        e.branches.retain(|b| b.weight > BRANCH_PRUNE);
        e
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn total_weight(&self) -> f64 {
        self.branches.iter().map(|b| b.weight).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// Shared mode list of all branches.
    pub fn modes(&self) -> &[ModeLabel] {
        self.branches
            .first()
            .map(|b| b.state.modes())
            .unwrap_or(&[])
    }

    /// Rescale weights so they sum to 1.
    pub fn normalized(&self) -> Self {
        let w = self.total_weight();
        if w <= 0.0 {
            return self.clone();
        }
        BranchEnsemble {
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    weight: b.weight / w,
                    state: b.state.clone(),
                })
                .collect(),
        }
    }

    /// Apply a pure-state map to every branch. Branch norms are folded
    /// into the weights, so trace-decreasing maps (truncation) are
    /// accounted for.
    pub fn map_states<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&PureState) -> Result<PureState>,
    {
        let mut out = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let s = f(&b.state)?;
            let n = s.norm_sqr();
            out.push(Branch {
                weight: b.weight * n,
                state: s.normalized(),
            });
        }
        Ok(Self::from_branches(out))
    }

    pub fn apply_element(&self, elem: &OpticalElement, modes: &[ModeLabel]) -> Result<Self> {
        self.map_states(|s| s.apply_element(elem, modes))
    }

    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let mut out = Vec::with_capacity(self.branches.len() * other.branches.len());
        for a in &self.branches {
            for b in &other.branches {
                let s = a.state.tensor(&b.state)?;
                let n = s.norm_sqr(); // < 1 when truncation dropped weight
                let w = a.weight * b.weight * n;
                if w > BRANCH_PRUNE {
                    out.push(Branch {
                        weight: w,
                        state: s.normalized(),
                    });
                }
            }
        }
        Ok(Self::from_branches(out))
    }

    pub fn relabel_modes(&self, map: &[(ModeLabel, ModeLabel)]) -> Result<Self> {
        self.map_states(|s| s.relabel_modes(map))
    }

    pub fn remove_mode(&self, mode: &ModeLabel) -> Result<Self> {
        self.map_states(|s| s.remove_mode(mode))
    }

    /// Photon loss on one mode with the given transmittance, implemented
    /// as a beam splitter to a fresh environment mode followed by
    /// branching on (and discarding of) the environment occupation.
    /// Total weight is conserved.
    pub fn loss_channel(&self, mode: &ModeLabel, transmittance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmittance) || !transmittance.is_finite() {
            return Err(Error::OutOfRange {
                name: "transmittance",
                value: transmittance,
            });
        }
        let mut out = Vec::new();
        for b in &self.branches {
            let idx = b.state.mode_index(mode)?;
            let occupied = b.state.iter().any(|(k, _)| k[idx] != 0);
            if !occupied || transmittance == 1.0 {
                out.push(b.clone());
                continue;
            }
            let env = mode.env_partner();
            let coupled = b
                .state
                .add_mode(env)?
                .apply_element(&OpticalElement::loss_coupler(transmittance)?, &[*mode, env])?;
            // Branch on the environment occupation, then drop the
            // environment mode from each conditional component.
            let env_idx = coupled.mode_index(&env)?;
            let mut by_env: BTreeMap<u8, BTreeMap<Occupation, Complex64>> = BTreeMap::new();
            for (k, a) in coupled.iter() {
                let m = k[env_idx];
                let mut key = k.clone();
                key[env_idx] = 0;
                *by_env
                    .entry(m)
                    .or_default()
                    .entry(key)
                    .or_insert(Complex64::default()) += *a;
            }
            for (_, amps) in by_env {
                let s = PureState::from_parts(coupled.modes().to_vec(), coupled.n_max(), amps)
                    .remove_mode(&env)?;
                let w = b.weight * s.norm_sqr();
                if w > BRANCH_PRUNE {
                    out.push(Branch {
                        weight: w,
                        state: s.normalized(),
                    });
                }
            }
        }
        Ok(Self::from_branches(out))
    }

    /// Measure the listed modes with the given detector model.
    ///
    /// Number-resolving detectors report detected photon counts; threshold
    /// detectors report click (1) / no-click (0). Outcome probabilities sum
    /// to the total input weight; each outcome's conditional state has the
    /// detected modes reset to vacuum (destructive detection) and is
    /// normalized to total weight 1.
    pub fn measure(
        &self,
        detector_modes: &[ModeLabel],
        model: &DetectorModel,
    ) -> Result<Vec<MeasurementOutcome>> {
        for m in detector_modes {
            if !self.branches.is_empty() {
                self.branches[0].state.mode_index(m)?;
            }
        }
        // Frontier entries carry raw (unnormalized) states whose squared
        // norm is the accumulated probability weight.
        let mut grouped: BTreeMap<Vec<u32>, Vec<PureState>> = BTreeMap::new();
        for b in &self.branches {
            let seed = b.state.scaled(Complex64::new(b.weight.sqrt(), 0.0));
            let mut frontier: Vec<(Vec<u32>, PureState)> = vec![(Vec::new(), seed)];
            for mode in detector_modes {
                let mut next = Vec::new();
                for (pattern, raw) in &frontier {
                    for (reported, piece) in split_detector(raw, mode, model)? {
                        let mut p2 = pattern.clone();
                        p2.push(reported);
                        next.push((p2, piece));
                    }
                }
                frontier = next;
            }
            for (pattern, raw) in frontier {
                grouped.entry(pattern).or_default().push(raw);
            }
        }
        let mut outcomes = Vec::new();
        for (pattern, raws) in grouped {
            let mut probability = 0.0;
            let mut branches = Vec::new();
            for raw in raws {
                let w = raw.norm_sqr();
                if w > BRANCH_PRUNE {
                    probability += w;
                    branches.push(Branch {
                        weight: w,
                        state: raw.normalized(),
                    });
                }
            }
            if branches.is_empty() {
                continue;
            }
            let post = BranchEnsemble::from_branches(branches).normalized();
            let pattern_map = detector_modes
                .iter()
                .copied()
                .zip(pattern.iter().copied())
                .collect();
            outcomes.push(MeasurementOutcome {
                pattern: pattern_map,
                probability,
                post,
            });
        }
        Ok(outcomes)
    }

    /// Σᵢ wᵢ·|⟨target|ψᵢ⟩|² divided by the total weight.
    pub fn fidelity(&self, target: &PureState) -> Result<f64> {
        let total = self.total_weight();
        if total <= 0.0 {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for b in &self.branches {
            sum += b.weight * target.inner(&b.state)?.norm_sqr();
        }
        Ok((sum / total).clamp(0.0, 1.0))
    }

    /// Expected occupation of a mode, weighted over branches.
    pub fn expected_occupation(&self, mode: &ModeLabel) -> Result<f64> {
        let mut sum = 0.0;
        for b in &self.branches {
            sum += b.weight * b.state.expected_occupation(mode)?;
        }
        Ok(sum)
    }

    pub fn scale_amplitudes<F>(&self, f: F) -> Self
    where
        F: Fn(&[ModeLabel], &[u8]) -> Complex64,
    {
        BranchEnsemble {
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    weight: b.weight,
                    state: b.state.scale_amplitudes(&f),
                })
                .collect(),
        }
    }

    /// Canonical minimal representation: eigendecompose the ensemble's
    /// density matrix on its joint support and keep eigenbranches with
    /// nonnegligible weight. The represented density matrix (hence every
    /// downstream observable) is unchanged; the branch count is capped by
    /// the support dimension.
    pub fn compress(&self) -> Result<Self> {
        if self.branches.len() <= 1 {
            return Ok(self.clone());
        }
        let modes = self.modes().to_vec();
        let n_max = self.branches[0].state.n_max();
        let mut keys: Vec<Occupation> = Vec::new();
        {
            let mut seen = std::collections::BTreeSet::new();
            for b in &self.branches {
                if b.state.modes() != modes.as_slice() {
                    return Err(Error::ModeMismatch);
                }
                for (k, _) in b.state.iter() {
                    if seen.insert(k.clone()) {
                        keys.push(k.clone());
                    }
                }
            }
            keys.sort();
        }
        let dim = keys.len();
        if dim == 0 {
            return Ok(self.clone());
        }
        if dim > 4096 {
            return Err(Error::BasisTooLarge(dim));
        }
        let index: BTreeMap<&Occupation, usize> =
            keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let mut rho = DMatrix::<Complex64>::zeros(dim, dim);
        for b in &self.branches {
            let mut v = DMatrix::<Complex64>::zeros(dim, 1);
            for (k, a) in b.state.iter() {
                v[(index[k], 0)] = *a;
            }
            let w = Complex64::new(b.weight, 0.0);
            rho += (&v * v.adjoint()) * w;
        }
        let eig = rho.symmetric_eigen();
        let total = self.total_weight();
        let mut out = Vec::new();
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= 1e-15 * total.max(1.0) {
                continue;
            }
            let mut amps = BTreeMap::new();
            for (j, k) in keys.iter().enumerate() {
                let a = eig.eigenvectors[(j, i)];
                if a.norm() > 1e-15 {
                    amps.insert(k.clone(), a);
                }
            }
            let state = PureState::from_parts(modes.clone(), n_max, amps);
            let n = state.norm_sqr();
            if n > 0.0 {
                out.push(Branch {
                    weight: lambda * n,
                    state: state.normalized(),
                });
            }
        }
        out.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        Ok(Self::from_branches(out))
    }
}

/// Split one raw (weight-carrying) pure state on a single detector mode.
///
/// Returns (reported value, raw conditional piece) entries. A detector of
/// efficiency η seeing n photons detects k of them with probability
/// C(n,k)·η^k·(1−η)^(n−k); pieces with equal detected and lost counts stay
/// coherent, everything else decoheres into separate entries. The detected
/// mode is reset to vacuum.
fn split_detector(
    raw: &PureState,
    mode: &ModeLabel,
    model: &DetectorModel,
) -> Result<Vec<(u32, PureState)>> {
    let idx = raw.mode_index(mode)?;
    let eta = model.efficiency;
    let mut buckets: BTreeMap<(u8, u8), BTreeMap<Occupation, Complex64>> = BTreeMap::new();
    for (occ, amp) in raw.iter() {
        let n = occ[idx];
        let mut key = occ.clone();
        key[idx] = 0;
        if n == 0 {
            *buckets
                .entry((0, 0))
                .or_default()
                .entry(key)
                .or_insert(Complex64::default()) += *amp;
            continue;
        }
        for k in 0..=n {
            let l = n - k;
            let p = binomial(n as u32, k as u32)
                * eta.powi(k as i32)
                * (1.0 - eta).powi(l as i32);
            if p <= 0.0 {
                continue;
            }
            let factor = p.sqrt();
            *buckets
                .entry((k, l))
                .or_default()
                .entry(key.clone())
                .or_insert(Complex64::default()) += amp * factor;
        }
    }
    let mut entries = Vec::new();
    for ((k, _l), amps) in buckets {
        let piece = PureState::from_parts(raw.modes().to_vec(), raw.n_max(), amps);
        if piece.norm_sqr() <= BRANCH_PRUNE {
            continue;
        }
        let reported = if model.number_resolving {
            k as u32
        } else {
            (k > 0) as u32
        };
        entries.push((reported, piece));
    }
    Ok(entries)
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r *= (n - i) as f64 / (i + 1) as f64;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_optics::{Ensemble, Polarization, Site};

    fn photon_mode() -> ModeLabel {
        ModeLabel::stokes(Site::A, Ensemble::U, Polarization::H)
    }

    fn n_photons(n: usize) -> BranchEnsemble {
        let m = photon_mode();
        let mut s = PureState::vacuum(&[m], 6).unwrap();
        for _ in 0..n {
            s = s.apply_creation(&m).unwrap();
        }
        BranchEnsemble::from_pure(s.normalized())
    }

    #[test]
    fn loss_single_photon_branches() {
        let m = photon_mode();
        let t = 0.73;
        let out = n_photons(1).loss_channel(&m, t).unwrap();
        assert_eq!(out.branches().len(), 2);
        assert!((out.total_weight() - 1.0).abs() < 1e-12);
        // Branch ordering follows environment occupation: 0 lost first.
        assert!((out.branches()[0].weight - t).abs() < 1e-12);
        assert!((out.branches()[1].weight - (1.0 - t)).abs() < 1e-12);
    }

    #[test]
    fn loss_with_unit_transmittance_is_identity() {
        let m = photon_mode();
        let input = n_photons(2);
        let out = input.loss_channel(&m, 1.0).unwrap();
        assert_eq!(out.branches().len(), 1);
        assert!((out.total_weight() - 1.0).abs() < 1e-12);
        assert!(
            out.branches()[0]
                .state
                .max_amp_diff(&input.branches()[0].state)
                .unwrap()
                < 1e-12
        );
    }

    #[test]
    fn loss_two_photons_binomial_weights() {
        // Independent check: amplitudes of a beam splitter on |2,0⟩
        // enumerate to the binomial law C(2,k)·t^k·(1−t)^(2−k).
        let m = photon_mode();
        let t: f64 = 0.61;
        let out = n_photons(2).loss_channel(&m, t).unwrap();
        let expected = [t * t, 2.0 * t * (1.0 - t), (1.0 - t) * (1.0 - t)];
        assert_eq!(out.branches().len(), 3);
        for (b, e) in out.branches().iter().zip(expected) {
            assert!((b.weight - e).abs() < 1e-12, "{} vs {}", b.weight, e);
        }
        assert!((out.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_out_of_range_rejected() {
        let m = photon_mode();
        assert!(n_photons(1).loss_channel(&m, 1.5).is_err());
        assert!(n_photons(1).loss_channel(&m, -0.1).is_err());
    }

    #[test]
    fn measure_single_photon_click_probability() {
        let m = photon_mode();
        let eta = 0.83;
        let model = DetectorModel::threshold(eta).unwrap();
        let outcomes = n_photons(1).measure(&[m], &model).unwrap();
        let total: f64 = outcomes.iter().map(|o| o.probability).sum();
        assert!((total - 1.0).abs() < 1e-10);
        for o in &outcomes {
            match o.pattern[&m] {
                0 => assert!((o.probability - (1.0 - eta)).abs() < 1e-12),
                1 => assert!((o.probability - eta).abs() < 1e-12),
                _ => panic!("threshold detector reported a count"),
            }
        }
    }

    #[test]
    fn measure_two_photons_threshold_povm() {
        let m = photon_mode();
        let eta = 0.6;
        let model = DetectorModel::threshold(eta).unwrap();
        let outcomes = n_photons(2).measure(&[m], &model).unwrap();
        let click = outcomes
            .iter()
            .find(|o| o.pattern[&m] == 1)
            .expect("click outcome");
        assert!((click.probability - (1.0 - (1.0 - eta) * (1.0 - eta))).abs() < 1e-12);
    }

    #[test]
    fn measure_vacuum_single_outcome() {
        let m = photon_mode();
        let model = DetectorModel::threshold(0.9).unwrap();
        let outcomes = n_photons(0).measure(&[m], &model).unwrap();
        assert_eq!(outcomes.len(), 1);
        assert_eq!(outcomes[0].pattern[&m], 0);
        assert!((outcomes[0].probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measure_resolving_counts() {
        let m = photon_mode();
        let model = DetectorModel::ideal();
        let outcomes = n_photons(2).measure(&[m], &model).unwrap();
        assert_eq!(outcomes.len(), 1);
        assert_eq!(outcomes[0].pattern[&m], 2);
        // Detected mode reset to vacuum.
        let post = &outcomes[0].post.branches()[0].state;
        assert!((post.amplitude(&[]).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_examples() {
        let m = photon_mode();
        let vac = PureState::vacuum(&[m], 6).unwrap();
        let one = vac.apply_creation(&m).unwrap();
        let ens_one = BranchEnsemble::from_pure(one.clone());
        assert!((ens_one.fidelity(&one).unwrap() - 1.0).abs() < 1e-12);
        assert!(ens_one.fidelity(&vac).unwrap() < 1e-12);
        let half = BranchEnsemble::from_branches(vec![
            Branch {
                weight: 0.5,
                state: one.clone(),
            },
            Branch {
                weight: 0.5,
                state: vac.clone(),
            },
        ]);
        assert!((half.fidelity(&one).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn compress_merges_duplicate_branches() {
        let m = photon_mode();
        let one = PureState::vacuum(&[m], 6).unwrap().apply_creation(&m).unwrap();
        let ens = BranchEnsemble::from_branches(vec![
            Branch {
                weight: 0.25,
                state: one.clone(),
            },
            Branch {
                weight: 0.25,
                state: one.clone(),
            },
            Branch {
                weight: 0.5,
                state: one.scaled(Complex64::new(-1.0, 0.0)), // same ray
            },
        ]);
        let c = ens.compress().unwrap();
        assert_eq!(c.branches().len(), 1);
        assert!((c.total_weight() - 1.0).abs() < 1e-10);
        assert!((c.fidelity(&one).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn compress_preserves_density_matrix_observables() {
        let m = photon_mode();
        let vac = PureState::vacuum(&[m], 6).unwrap();
        let one = vac.apply_creation(&m).unwrap();
        // (|0⟩+|1⟩)/√2
        let plus = {
            let amps: BTreeMap<Occupation, Complex64> = [
                (vec![0u8], Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)),
                (vec![1u8], Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)),
            ]
            .into_iter()
            .collect();
            PureState::from_parts(vec![m], 6, amps)
        };
        let ens = BranchEnsemble::from_branches(vec![
            Branch {
                weight: 0.7,
                state: plus.clone(),
            },
            Branch {
                weight: 0.3,
                state: one.clone(),
            },
        ]);
        let c = ens.compress().unwrap();
        assert!(c.branches().len() <= 2);
        for target in [&vac, &one, &plus] {
            assert!(
                (ens.fidelity(target).unwrap() - c.fidelity(target).unwrap()).abs() < 1e-10,
                "fidelity changed under compression"
            );
        }
        assert!((c.total_weight() - 1.0).abs() < 1e-10);
    }
}

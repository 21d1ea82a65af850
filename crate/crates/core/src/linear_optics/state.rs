use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{element::OpticalElement, ModeLabel, AMPLITUDE_PRUNE};
use crate::{Error, Result};

/// Occupation vector aligned with a state's sorted mode list.
pub type Occupation = Vec<u8>;

/// Sparse pure state over a fixed, sorted set of labelled modes.
///
/// Basis states are occupation vectors with total occupation ≤ `n_max`;
/// zero-amplitude entries are absent and amplitudes below
/// [`AMPLITUDE_PRUNE`] are dropped after each transformation. The squared
/// norm is cached on construction.
#[derive(Clone, Debug)]
pub struct PureState {
    modes: Vec<ModeLabel>,
    n_max: u32,
    amps: BTreeMap<Occupation, Complex64>,
    norm_sqr: f64,
}

fn total(occ: &[u8]) -> u32 {
    occ.iter().map(|&n| n as u32).sum()
}

impl PureState {
    /// Vacuum over the given modes. An empty mode list yields the scalar
    /// state (amplitude 1 on the empty occupation).
    pub fn vacuum(modes: &[ModeLabel], n_max: u32) -> Result<Self> {
        let mut sorted = modes.to_vec();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateMode(w[0].to_string()));
            }
        }
        for m in &sorted {
            m.validate()?;
        }
        let mut amps = BTreeMap::new();
        amps.insert(vec![0u8; sorted.len()], Complex64::new(1.0, 0.0));
        Ok(PureState {
            modes: sorted,
            n_max,
            amps,
            norm_sqr: 1.0,
        })
    }

    pub(crate) fn from_parts(
        modes: Vec<ModeLabel>,
        n_max: u32,
        amps: BTreeMap<Occupation, Complex64>,
    ) -> Self {
        let mut s = PureState {
            modes,
            n_max,
            amps,
            norm_sqr: 0.0,
        };
        s.prune();
        s
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn norm_sqr(&self) -> f64 {
        self.norm_sqr
    }

    /// Number of stored basis states.
    pub fn support_len(&self) -> usize {
        self.amps.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Occupation, &Complex64)> {
        self.amps.iter()
    }

    pub fn mode_index(&self, mode: &ModeLabel) -> Result<usize> {
        self.modes
            .binary_search(mode)
            .map_err(|_| Error::UnknownMode(mode.to_string()))
    }

    /// Amplitude of the basis state described by (mode, occupation) pairs;
    /// unlisted modes are taken as unoccupied.
    pub fn amplitude(&self, occ_pairs: &[(ModeLabel, u8)]) -> Result<Complex64> {
        let mut key = vec![0u8; self.modes.len()];
        for (m, n) in occ_pairs {
            key[self.mode_index(m)?] = *n;
        }
        Ok(self.amps.get(&key).copied().unwrap_or_default())
    }

    fn recompute_norm(&mut self) {
        self.norm_sqr = self.amps.values().map(|a| a.norm_sqr()).sum();
    }

    fn prune(&mut self) {
        self.amps.retain(|_, a| a.norm() >= AMPLITUDE_PRUNE);
        self.recompute_norm();
    }

    /// Rescale to unit norm. A numerically zero state is returned unchanged.
    pub fn normalized(&self) -> Self {
        if self.norm_sqr <= 0.0 {
            return self.clone();
        }
        let inv = 1.0 / self.norm_sqr.sqrt();
        self.scaled(Complex64::new(inv, 0.0))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        let amps = self
            .amps
            .iter()
            .map(|(k, a)| (k.clone(), a * factor))
            .collect();
        Self::from_parts(self.modes.clone(), self.n_max, amps)
    }

    /// Apply the creation operator of `mode`: each component n → n+1 with
    /// the bosonic √(n+1) factor; components exceeding `n_max` are dropped.
    pub fn apply_creation(&self, mode: &ModeLabel) -> Result<Self> {
        let idx = self.mode_index(mode)?;
        let mut amps = BTreeMap::new();
        for (occ, amp) in &self.amps {
            if total(occ) + 1 > self.n_max {
                continue;
            }
            let mut next = occ.clone();
            next[idx] += 1;
            let factor = (next[idx] as f64).sqrt();
            *amps.entry(next).or_insert(Complex64::default()) += amp * factor;
        }
        Ok(Self::from_parts(self.modes.clone(), self.n_max, amps))
    }

    /// Apply a linear mode transformation to the listed modes: creation
    /// operators transform as a†ᵢ → Σⱼ U[j][i]·a†ⱼ over the listed modes.
    /// Norm is preserved (elements conserve photon number on their modes,
    /// so truncation cannot overflow).
    pub fn apply_element(&self, elem: &OpticalElement, modes: &[ModeLabel]) -> Result<Self> {
        if modes.len() != elem.dim() {
            return Err(Error::DimensionMismatch {
                expected: elem.dim(),
                got: modes.len(),
            });
        }
        let idx: Vec<usize> = modes
            .iter()
            .map(|m| self.mode_index(m))
            .collect::<Result<_>>()?;
        let k = idx.len();
        let mut out: BTreeMap<Occupation, Complex64> = BTreeMap::new();
        for (occ, amp) in &self.amps {
            let sub: Vec<u8> = idx.iter().map(|&i| occ[i]).collect();
            // Seed coefficient: strip the Fock normalization of the input
            // sub-occupations, then rebuild with creation operators.
            let mut seed = *amp;
            for &n in &sub {
                for m in 1..=n as u32 {
                    seed /= (m as f64).sqrt();
                }
            }
            let mut terms: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
            terms.insert(vec![0u8; k], seed);
            for (col, &n) in sub.iter().enumerate() {
                for _ in 0..n {
                    let mut next: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
                    for (m, c) in &terms {
                        for row in 0..k {
                            let u = elem.get(row, col);
                            if u.norm_sqr() == 0.0 {
                                continue;
                            }
                            let mut m2 = m.clone();
                            m2[row] += 1;
                            let factor = (m2[row] as f64).sqrt();
                            *next.entry(m2).or_insert(Complex64::default()) += c * u * factor;
                        }
                    }
                    terms = next;
                }
            }
            for (m, c) in terms {
                let mut occ2 = occ.clone();
                for (slot, &mj) in idx.iter().zip(m.iter()) {
                    occ2[*slot] = mj;
                }
                if total(&occ2) <= self.n_max {
                    *out.entry(occ2).or_insert(Complex64::default()) += c;
                }
            }
        }
        Ok(Self::from_parts(self.modes.clone(), self.n_max, out))
    }

    /// Tensor product with a state over disjoint modes. Components whose
    /// combined total occupation exceeds `n_max` are dropped; callers that
    /// need a normalized result must renormalize.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        if self.n_max != other.n_max {
            return Err(Error::InvalidArgument(format!(
                "tensor of states with different truncation ({} vs {})",
                self.n_max, other.n_max
            )));
        }
        let mut modes = self.modes.clone();
        modes.extend_from_slice(&other.modes);
        modes.sort();
        for w in modes.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateMode(w[0].to_string()));
            }
        }
        // Positions of each factor's modes in the merged list.
        let pos_a: Vec<usize> = self
            .modes
            .iter()
            .map(|m| modes.binary_search(m).unwrap())
            .collect();
        let pos_b: Vec<usize> = other
            .modes
            .iter()
            .map(|m| modes.binary_search(m).unwrap())
            .collect();
        let mut amps = BTreeMap::new();
        for (ka, aa) in &self.amps {
            for (kb, ab) in &other.amps {
                if total(ka) + total(kb) > self.n_max {
                    continue;
                }
                let mut key = vec![0u8; modes.len()];
                for (i, &p) in pos_a.iter().enumerate() {
                    key[p] = ka[i];
                }
                for (i, &p) in pos_b.iter().enumerate() {
                    key[p] = kb[i];
                }
                amps.insert(key, aa * ab);
            }
        }
        Ok(Self::from_parts(modes, self.n_max, amps))
    }

    /// ⟨self|other⟩ (self is conjugated). Mode sets must match.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        if self.modes != other.modes {
            return Err(Error::ModeMismatch);
        }
        let (small, big, conj_small) = if self.amps.len() <= other.amps.len() {
            (&self.amps, &other.amps, true)
        } else {
            (&other.amps, &self.amps, false)
        };
        let mut sum = Complex64::default();
        for (k, a) in small {
            if let Some(b) = big.get(k) {
                sum += if conj_small { a.conj() * b } else { b.conj() * a };
            }
        }
        Ok(sum)
    }

    /// Expected occupation ⟨n⟩ of one mode.
    pub fn expected_occupation(&self, mode: &ModeLabel) -> Result<f64> {
        let idx = self.mode_index(mode)?;
        Ok(self
            .amps
            .iter()
            .map(|(k, a)| k[idx] as f64 * a.norm_sqr())
            .sum())
    }

    /// Add an unoccupied mode.
    pub fn add_mode(&self, mode: ModeLabel) -> Result<Self> {
        mode.validate()?;
        if self.modes.binary_search(&mode).is_ok() {
            return Err(Error::ModeAlreadyPresent(mode.to_string()));
        }
        let mut modes = self.modes.clone();
        let at = modes.binary_search(&mode).unwrap_err();
        modes.insert(at, mode);
        let amps = self
            .amps
            .iter()
            .map(|(k, a)| {
                let mut k2 = k.clone();
                k2.insert(at, 0);
                (k2, *a)
            })
            .collect();
        Ok(Self::from_parts(modes, self.n_max, amps))
    }

    /// Remove a mode that is unoccupied in every component.
    pub fn remove_mode(&self, mode: &ModeLabel) -> Result<Self> {
        let idx = self.mode_index(mode)?;
        if self.amps.keys().any(|k| k[idx] != 0) {
            return Err(Error::ModeNotVacuum(mode.to_string()));
        }
        let mut modes = self.modes.clone();
        modes.remove(idx);
        let amps = self
            .amps
            .iter()
            .map(|(k, a)| {
                let mut k2 = k.clone();
                k2.remove(idx);
                (k2, *a)
            })
            .collect();
        Ok(Self::from_parts(modes, self.n_max, amps))
    }

    /// Rename modes according to `map` (old → new). Unlisted modes keep
    /// their label; the full relabelled set must still be free of
    /// duplicates.
    pub fn relabel_modes(&self, map: &[(ModeLabel, ModeLabel)]) -> Result<Self> {
        let mut new_modes: Vec<ModeLabel> = Vec::with_capacity(self.modes.len());
        for m in &self.modes {
            let renamed = map.iter().find(|(from, _)| from == m).map(|(_, to)| *to);
            let label = renamed.unwrap_or(*m);
            label.validate()?;
            new_modes.push(label);
        }
        let mut order: Vec<usize> = (0..new_modes.len()).collect();
        order.sort_by_key(|&i| new_modes[i]);
        let sorted: Vec<ModeLabel> = order.iter().map(|&i| new_modes[i]).collect();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateMode(w[0].to_string()));
            }
        }
        let amps = self
            .amps
            .iter()
            .map(|(k, a)| {
                let key: Vec<u8> = order.iter().map(|&i| k[i]).collect();
                (key, *a)
            })
            .collect();
        Ok(Self::from_parts(sorted, self.n_max, amps))
    }

    /// Multiply each amplitude by `f(modes, occupation)`. Intended for
    /// diagonal corrections such as per-excitation phases.
    pub fn scale_amplitudes<F>(&self, f: F) -> Self
    where
        F: Fn(&[ModeLabel], &[u8]) -> Complex64,
    {
        let amps = self
            .amps
            .iter()
            .map(|(k, a)| (k.clone(), a * f(&self.modes, k)))
            .collect();
        Self::from_parts(self.modes.clone(), self.n_max, amps)
    }

    /// Global-phase canonical form: the first nonzero amplitude in basis
    /// order is made real and positive. Used for reporting and goldens.
    pub fn canonical_phase(&self) -> Self {
        match self.amps.values().find(|a| a.norm() > 0.0) {
            Some(first) => {
                let phase = first / first.norm();
                self.scaled(phase.conj())
            }
            None => self.clone(),
        }
    }

    /// Max elementwise amplitude difference against another state on the
    /// same modes (basis states absent on one side count with amplitude 0).
    pub fn max_amp_diff(&self, other: &Self) -> Result<f64> {
        if self.modes != other.modes {
            return Err(Error::ModeMismatch);
        }
        let mut keys: std::collections::BTreeSet<&Occupation> = self.amps.keys().collect();
        keys.extend(other.amps.keys());
        let mut max = 0.0f64;
        for k in keys {
            let a = self.amps.get(k).copied().unwrap_or_default();
            let b = other.amps.get(k).copied().unwrap_or_default();
            max = max.max((a - b).norm());
        }
        Ok(max)
    }
}

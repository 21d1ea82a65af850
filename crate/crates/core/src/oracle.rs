//! Independent dense-matrix reference implementation.
//!
//! Everything here recomputes the engine's transformations by an unrelated
//! route on an explicitly enumerated basis:
//!
//! - mode transformations become dense unitaries whose entries are
//!   permanents of row/column-repeated coupling matrices,
//! - loss channels become explicit Kraus-operator sums,
//! - detector outcomes become diagonal POVM sums.
//!
//! The module is meant for tests and for deriving golden reference values;
//! it trades all performance for transparency and is single-threaded.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linear_optics::{
    BranchEnsemble, DetectorModel, ModeLabel, Occupation, OpticalElement, PureState,
};
use crate::{Error, Result};

/// Hard cap on the enumerated basis size.
pub const MAX_BASIS: usize = 6000;

/// Explicitly enumerated truncated Fock basis over a sorted mode list.
///
/// Basis states are occupation vectors with total ≤ `n_max`, ordered
/// lexicographically; the index of each vector is reproducible and is the
/// coordinate used by every dense object in this module.
pub struct Basis {
    modes: Vec<ModeLabel>,
    n_max: u32,
    states: Vec<Occupation>,
    index: BTreeMap<Occupation, usize>,
}

impl Basis {
    pub fn new(modes: &[ModeLabel], n_max: u32) -> Result<Self> {
        let mut sorted = modes.to_vec();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateMode(w[0].to_string()));
            }
        }
        let mut states = Vec::new();
        let mut current = vec![0u8; sorted.len()];
        enumerate(&mut states, &mut current, 0, n_max);
        states.sort();
        if states.len() > MAX_BASIS {
            return Err(Error::BasisTooLarge(states.len()));
        }
        let index = states
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Ok(Basis {
            modes: sorted,
            n_max,
            states,
            index,
        })
    }

    pub fn for_state(state: &PureState) -> Result<Self> {
        Self::new(state.modes(), state.n_max())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn states(&self) -> &[Occupation] {
        &self.states
    }

    pub fn index_of(&self, occ: &Occupation) -> Option<usize> {
        self.index.get(occ).copied()
    }

    /// Lossless conversion of a sparse state into dense coordinates.
    pub fn dense_state(&self, state: &PureState) -> Result<DMatrix<Complex64>> {
        if state.modes() != self.modes.as_slice() {
            return Err(Error::ModeMismatch);
        }
        let mut v = DMatrix::<Complex64>::zeros(self.len(), 1);
        for (k, a) in state.iter() {
            let i = self
                .index_of(k)
                .ok_or_else(|| Error::InvalidArgument("state exceeds basis truncation".into()))?;
            v[(i, 0)] = *a;
        }
        Ok(v)
    }

    /// Inverse of [`Basis::dense_state`].
    pub fn sparse_state(&self, v: &DMatrix<Complex64>) -> PureState {
        let mut amps = BTreeMap::new();
        for (i, k) in self.states.iter().enumerate() {
            let a = v[(i, 0)];
            if a.norm() > 0.0 {
                amps.insert(k.clone(), a);
            }
        }
        PureState::from_parts(self.modes.clone(), self.n_max, amps)
    }

    /// Density matrix of a branch ensemble in this basis.
    pub fn density_matrix(&self, ens: &BranchEnsemble) -> Result<DMatrix<Complex64>> {
        let mut rho = DMatrix::<Complex64>::zeros(self.len(), self.len());
        for b in ens.branches() {
            let v = self.dense_state(&b.state)?;
            rho += (&v * v.adjoint()) * Complex64::new(b.weight, 0.0);
        }
        Ok(rho)
    }

    /// Dense matrix of the multimode unitary induced by `elem` acting on
    /// the listed modes. Entries are computed from the permanent formula
    /// ⟨m|Γ(U)|n⟩ = Per(U[m,n]) / √(∏mᵢ!·∏nⱼ!), with U[m,n] the coupling
    /// matrix with row i repeated mᵢ times and column j repeated nⱼ times.
    pub fn element_matrix(
        &self,
        elem: &OpticalElement,
        modes: &[ModeLabel],
    ) -> Result<DMatrix<Complex64>> {
        if modes.len() != elem.dim() {
            return Err(Error::DimensionMismatch {
                expected: elem.dim(),
                got: modes.len(),
            });
        }
        let idx: Vec<usize> = modes
            .iter()
            .map(|m| {
                self.modes
                    .binary_search(m)
                    .map_err(|_| Error::UnknownMode(m.to_string()))
            })
            .collect::<Result<_>>()?;
        let d = self.len();
        let mut u = DMatrix::<Complex64>::zeros(d, d);
        // Group the basis by off-element occupation; the element acts
        // block-diagonally with photon number conserved on its modes.
        let mut groups: BTreeMap<Occupation, Vec<usize>> = BTreeMap::new();
        for (i, k) in self.states.iter().enumerate() {
            let mut off = k.clone();
            for &j in &idx {
                off[j] = 0;
            }
            groups.entry(off).or_default().push(i);
        }
        for (_, members) in groups {
            for &col in &members {
                let n_sub: Vec<u8> = idx.iter().map(|&j| self.states[col][j]).collect();
                let n_tot: u32 = n_sub.iter().map(|&x| x as u32).sum();
                for &row in &members {
                    let m_sub: Vec<u8> = idx.iter().map(|&j| self.states[row][j]).collect();
                    let m_tot: u32 = m_sub.iter().map(|&x| x as u32).sum();
                    if m_tot != n_tot {
                        continue;
                    }
                    if n_tot == 0 {
                        u[(row, col)] = Complex64::new(1.0, 0.0);
                        continue;
                    }
                    u[(row, col)] = repeated_permanent(elem, &m_sub, &n_sub);
                }
            }
        }
        Ok(u)
    }

    /// Kraus operators of a loss channel of transmittance t on one mode:
    /// Kₘ|n⟩ = √(C(n,m)·t^(n−m)·(1−t)^m) |n−m⟩ for m lost photons.
    pub fn loss_kraus(
        &self,
        mode: &ModeLabel,
        transmittance: f64,
    ) -> Result<Vec<DMatrix<Complex64>>> {
        let j = self
            .modes
            .binary_search(mode)
            .map_err(|_| Error::UnknownMode(mode.to_string()))?;
        if !(0.0..=1.0).contains(&transmittance) {
            return Err(Error::OutOfRange {
                name: "transmittance",
                value: transmittance,
            });
        }
        let d = self.len();
        let max_n = self.n_max as usize;
        let mut kraus = Vec::new();
        for lost in 0..=max_n {
            let mut k_op = DMatrix::<Complex64>::zeros(d, d);
            let mut nonzero = false;
            for (col, occ) in self.states.iter().enumerate() {
                let n = occ[j] as usize;
                if n < lost {
                    continue;
                }
                let mut out = occ.clone();
                out[j] = (n - lost) as u8;
                let row = self.index_of(&out).unwrap();
                let p = binom(n, lost)
                    * transmittance.powi((n - lost) as i32)
                    * (1.0 - transmittance).powi(lost as i32);
                if p > 0.0 {
                    k_op[(row, col)] = Complex64::new(p.sqrt(), 0.0);
                    nonzero = true;
                }
            }
            if nonzero {
                kraus.push(k_op);
            }
        }
        Ok(kraus)
    }

    /// ρ → ΣₘKₘρKₘ† for a loss channel.
    pub fn apply_loss(
        &self,
        rho: &DMatrix<Complex64>,
        mode: &ModeLabel,
        transmittance: f64,
    ) -> Result<DMatrix<Complex64>> {
        let kraus = self.loss_kraus(mode, transmittance)?;
        let mut out = DMatrix::<Complex64>::zeros(self.len(), self.len());
        for k in kraus {
            out += &k * rho * k.adjoint();
        }
        Ok(out)
    }

    /// Detector POVM applied to a density matrix: one entry per click
    /// pattern over the given modes with its probability and the
    /// (unnormalized) conditional density matrix, detected modes reset to
    /// vacuum.
    pub fn measure_density(
        &self,
        rho: &DMatrix<Complex64>,
        detector_modes: &[ModeLabel],
        model: &DetectorModel,
    ) -> Result<Vec<(Vec<u32>, f64, DMatrix<Complex64>)>> {
        let mut frontier: Vec<(Vec<u32>, DMatrix<Complex64>)> = vec![(Vec::new(), rho.clone())];
        for mode in detector_modes {
            let mut next: BTreeMap<Vec<u32>, DMatrix<Complex64>> = BTreeMap::new();
            for (pattern, r) in &frontier {
                for (reported, r2) in self.measure_one(r, mode, model)? {
                    let mut p2 = pattern.clone();
                    p2.push(reported);
                    match next.get_mut(&p2) {
                        Some(acc) => *acc += r2,
                        None => {
                            next.insert(p2, r2);
                        }
                    }
                }
            }
            frontier = next.into_iter().collect();
        }
        Ok(frontier
            .into_iter()
            .map(|(pattern, r)| {
                let p = trace_re(&r);
                (pattern, p, r)
            })
            .filter(|(_, p, _)| *p > 1e-24)
            .collect())
    }

    fn measure_one(
        &self,
        rho: &DMatrix<Complex64>,
        mode: &ModeLabel,
        model: &DetectorModel,
    ) -> Result<Vec<(u32, DMatrix<Complex64>)>> {
        let j = self
            .modes
            .binary_search(mode)
            .map_err(|_| Error::UnknownMode(mode.to_string()))?;
        let eta = model.efficiency;
        let d = self.len();
        // Kraus per (detected k, lost l): |0⟩⟨k+l| on the mode, weighted by
        // the binomial detection amplitude.
        let mut by_report: BTreeMap<u32, DMatrix<Complex64>> = BTreeMap::new();
        for k in 0..=self.n_max as usize {
            for l in 0..=(self.n_max as usize - k) {
                let n = k + l;
                let p = binom(n, k) * eta.powi(k as i32) * (1.0 - eta).powi(l as i32);
                if p <= 0.0 {
                    continue;
                }
                let mut op = DMatrix::<Complex64>::zeros(d, d);
                let mut nonzero = false;
                for (col, occ) in self.states.iter().enumerate() {
                    if occ[j] as usize != n {
                        continue;
                    }
                    let mut out = occ.clone();
                    out[j] = 0;
                    let row = self.index_of(&out).unwrap();
                    op[(row, col)] = Complex64::new(p.sqrt(), 0.0);
                    nonzero = true;
                }
                if !nonzero {
                    continue;
                }
                let contrib = &op * rho * op.adjoint();
                let reported = if model.number_resolving {
                    k as u32
                } else {
                    (k > 0) as u32
                };
                match by_report.get_mut(&reported) {
                    Some(acc) => *acc += contrib,
                    None => {
                        by_report.insert(reported, contrib);
                    }
                }
            }
        }
        Ok(by_report.into_iter().collect())
    }

    /// Restrict a density matrix to a subset of modes; all discarded modes
    /// must be exactly unoccupied on the support.
    pub fn restrict(
        &self,
        rho: &DMatrix<Complex64>,
        keep: &[ModeLabel],
        out_basis: &Basis,
    ) -> Result<DMatrix<Complex64>> {
        let keep_idx: Vec<usize> = keep
            .iter()
            .map(|m| {
                self.modes
                    .binary_search(m)
                    .map_err(|_| Error::UnknownMode(m.to_string()))
            })
            .collect::<Result<_>>()?;
        let mut out = DMatrix::<Complex64>::zeros(out_basis.len(), out_basis.len());
        for (i, ki) in self.states.iter().enumerate() {
            let Some(pi) = project_key(ki, &keep_idx) else {
                continue;
            };
            let Some(oi) = out_basis.index_of(&pi) else {
                continue;
            };
            for (j, kj) in self.states.iter().enumerate() {
                let Some(pj) = project_key(kj, &keep_idx) else {
                    continue;
                };
                let Some(oj) = out_basis.index_of(&pj) else {
                    continue;
                };
                out[(oi, oj)] += rho[(i, j)];
            }
        }
        Ok(out)
    }
}

/// Occupation restricted to `keep`; `None` if any discarded mode is occupied.
fn project_key(occ: &Occupation, keep: &[usize]) -> Option<Occupation> {
    let mut out = Vec::with_capacity(keep.len());
    for (j, &n) in occ.iter().enumerate() {
        if keep.contains(&j) {
            out.push(n);
        } else if n != 0 {
            return None;
        }
    }
    Some(out)
}

fn enumerate(states: &mut Vec<Occupation>, current: &mut Occupation, pos: usize, budget: u32) {
    if pos == current.len() {
        states.push(current.clone());
        return;
    }
    for n in 0..=budget {
        current[pos] = n as u8;
        enumerate(states, current, pos + 1, budget - n);
    }
    current[pos] = 0;
}

fn repeated_permanent(elem: &OpticalElement, m_sub: &[u8], n_sub: &[u8]) -> Complex64 {
    let mut rows = Vec::new();
    for (i, &m) in m_sub.iter().enumerate() {
        for _ in 0..m {
            rows.push(i);
        }
    }
    let mut cols = Vec::new();
    for (j, &n) in n_sub.iter().enumerate() {
        for _ in 0..n {
            cols.push(j);
        }
    }
    debug_assert_eq!(rows.len(), cols.len());
    let t = rows.len();
    let mat: Vec<Complex64> = (0..t * t)
        .map(|p| elem.get(rows[p / t], cols[p % t]))
        .collect();
    let mut denom = 1.0f64;
    for &m in m_sub {
        denom *= fact(m as usize);
    }
    for &n in n_sub {
        denom *= fact(n as usize);
    }
    permanent(&mat, t) / denom.sqrt()
}

/// Naive expansion over column choices; fine for ≤ n_max photons.
fn permanent(mat: &[Complex64], n: usize) -> Complex64 {
    fn rec(mat: &[Complex64], n: usize, row: usize, used: &mut [bool]) -> Complex64 {
        if row == n {
            return Complex64::new(1.0, 0.0);
        }
        let mut sum = Complex64::default();
        for col in 0..n {
            if used[col] {
                continue;
            }
            let a = mat[row * n + col];
            if a.norm_sqr() == 0.0 {
                continue;
            }
            used[col] = true;
            sum += a * rec(mat, n, row + 1, used);
            used[col] = false;
        }
        sum
    }
    if n == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let mut used = vec![false; n];
    rec(mat, n, 0, &mut used)
}

fn fact(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut r = 1.0;
    for i in 0..k {
        r *= (n - i) as f64 / (i + 1) as f64;
    }
    r
}

pub fn trace_re(rho: &DMatrix<Complex64>) -> f64 {
    (0..rho.nrows()).map(|i| rho[(i, i)].re).sum()
}

/// Max elementwise modulus difference between two dense matrices.
pub fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let mut max = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            max = max.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    max
}

/// Plain-text derivation record: a `# modes:` header, then one line per
/// basis state with the occupation vector followed by the real and
/// imaginary amplitude parts.
pub fn format_state_lines(state: &PureState) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# modes: {}",
        state
            .modes()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    for (k, a) in state.iter() {
        let occ = k
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(out, "{occ}  {:+.12e} {:+.12e}", a.re, a.im);
    }
    out
}

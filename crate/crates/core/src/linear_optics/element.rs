use num_complex::Complex64;

use crate::{Error, Result};

const UNITARITY_TOL: f64 = 1e-12;

/// Unitary mode transformation over k labelled modes.
///
/// The matrix acts on creation operators: a†ᵢ → Σⱼ U[j][i]·a†ⱼ, i.e. the
/// i-th column is the output decomposition of a single photon entering
/// mode i.
#[derive(Clone, Debug)]
pub struct OpticalElement {
    name: String,
    dim: usize,
    matrix: Vec<Complex64>, // row-major
}

impl OpticalElement {
    pub fn new(name: &str, dim: usize, matrix: Vec<Complex64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.len(),
            });
        }
        let elem = OpticalElement {
            name: name.to_string(),
            dim,
            matrix,
        };
        let dev = elem.unitarity_deviation();
        if dev > UNITARITY_TOL {
            return Err(Error::NotUnitary(dev));
        }
        Ok(elem)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[row * self.dim + col]
    }

    /// Max elementwise deviation of U†U from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let mut max = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut s = Complex64::default();
                for k in 0..self.dim {
                    s += self.get(k, i).conj() * self.get(k, j);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                max = max.max((s - Complex64::new(target, 0.0)).norm());
            }
        }
        max
    }

    fn re(vals: &[f64]) -> Vec<Complex64> {
        vals.iter().map(|&v| Complex64::new(v, 0.0)).collect()
    }

    /// Symmetric 50:50 beam splitter (1/√2)[[1,1],[1,−1]].
    pub fn beam_splitter() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        OpticalElement::new("BS", 2, Self::re(&[s, s, s, -s])).unwrap()
    }

    /// Basis rotation taking the |±⟩ components of a (H, V) mode pair onto
    /// the (H, V) slots, so detection after it reads out the ±45° basis.
    /// Numerically identical to [`OpticalElement::beam_splitter`].
    pub fn rotation_pm() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        OpticalElement::new("ROT±", 2, Self::re(&[s, s, s, -s])).unwrap()
    }

    /// Polarizing beam splitter over [s1_H, s1_V, s2_H, s2_V]: |H⟩ is
    /// transmitted (keeps its spatial slot), |V⟩ is reflected into the
    /// other slot with phase +1.
    pub fn pbs_hv() -> Self {
        OpticalElement::new(
            "PBS",
            4,
            Self::re(&[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 0.0,
            ]),
        )
        .unwrap()
    }

    /// PBS in the ±45° basis over [s1_H, s1_V, s2_H, s2_V]: |+⟩ is
    /// transmitted, |−⟩ reflected into the other slot. Equals the H/V PBS
    /// conjugated by the ± rotation on each slot.
    pub fn pbs_pm() -> Self {
        let h = 0.5;
        OpticalElement::new(
            "PBS±",
            4,
            Self::re(&[
                h, h, h, -h, //
                h, h, -h, h, //
                h, -h, h, h, //
                -h, h, h, h,
            ]),
        )
        .unwrap()
    }

    /// Two-mode coupler implementing a loss channel of transmittance t:
    /// column 0 (the lossy mode) maps to √t·(kept) + √(1−t)·(environment).
    pub fn loss_coupler(transmittance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmittance) || !transmittance.is_finite() {
            return Err(Error::OutOfRange {
                name: "transmittance",
                value: transmittance,
            });
        }
        let t = transmittance.sqrt();
        let r = (1.0 - transmittance).sqrt();
        OpticalElement::new("loss", 2, Self::re(&[t, -r, r, t]))
    }
}

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const EIGEN_FLOOR: f64 = 1e-6;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] naming the first pivot that is not
/// strictly positive.
pub fn cholesky_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: m.ncols(),
        });
    }
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * (1.0 + m[(i, j)].abs()) {
                return domain(format!("matrix is not symmetric at ({i}, {j})"));
            }
        }
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L` in place.
pub fn forward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Symmetric positive-definite matrix with its cached Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let factor = cholesky_factor(&entries)?;
        Ok(Self { entries, factor })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
            factor: DMatrix::identity(dim, dim),
        }
    }

    /// Builds a correlation matrix, repairing indefinite input by clipping
    /// eigenvalues at 1e-6 and rescaling back to unit diagonal.
    pub fn correlation_repaired(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: m.ncols(),
            });
        }
        let sym = (&m + m.transpose()) * 0.5;
        if let Ok(spd) = Self::new(sym.clone()) {
            if (0..n).all(|i| spd.factor[(i, i)] > EIGEN_FLOOR.sqrt()) {
                return Ok(spd);
            }
        }
        let eig = SymmetricEigen::new(sym);
        let clipped = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
        let rebuilt =
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let scale = DVector::from_iterator(n, (0..n).map(|i| 1.0 / rebuilt[(i, i)].sqrt()));
        let mut corr = DMatrix::from_fn(n, n, |i, j| rebuilt[(i, j)] * scale[i] * scale[j]);
        for i in 0..n {
            corr[(i, i)] = 1.0;
            for j in 0..i {
                let v = 0.5 * (corr[(i, j)] + corr[(j, i)]);
                corr[(i, j)] = v;
                corr[(j, i)] = v;
            }
        }
        Self::new(corr)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| self.factor[(i, i)].ln())
            .sum::<f64>()
    }

    /// Quadratic form `zᵀ Σ⁻¹ z`; `scratch` must have length `dim`.
    pub fn inv_quad_form(&self, z: &[f64], scratch: &mut [f64]) -> f64 {
        scratch.copy_from_slice(z);
        forward_substitute(&self.factor, scratch);
        scratch.iter().map(|w| w * w).sum()
    }

    /// `L z` for the cached lower factor.
    pub fn mul_factor(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            out[i] = (0..=i).map(|k| self.factor[(i, k)] * z[k]).sum();
        }
    }

    /// Applies a variable permutation: result[i][j] = self[perm[i]][perm[j]].
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.dim();
        if perm.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: perm.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| {
            self.entries[(perm[i], perm[j])]
        }))
    }
}

impl TryFrom<DMatrix<f64>> for SpdMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(m: SpdMatrix) -> Self {
        m.entries
    }
}

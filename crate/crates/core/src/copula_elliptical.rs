//! Multivariate Gaussian and Student-t copulas: density, simulation,
//! conditional simulation given a trailing block of coordinates, and fitting
//! by pairwise Kendall-tau inversion with a profile likelihood for ν.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::concordance::kendall_tau;
use crate::copula_pair::{clamp_unit, NU_GRID};
use crate::error::{domain, Error, Result};
use crate::numerics::{cholesky_factor, norm_cdf, norm_quantile, SpdMatrix, StudentT};

const ROWS_PER_DIM: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EllipticalFamily {
    Gaussian,
    #[serde(rename = "t")]
    StudentT {
        nu: f64,
    },
}

/// Which family to fit; ν is estimated for the t-copula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllipticalKind {
    Gaussian,
    StudentT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticalCopula {
    family: EllipticalFamily,
    sigma: SpdMatrix,
}

impl EllipticalCopula {
    pub fn new(family: EllipticalFamily, sigma: SpdMatrix) -> Result<Self> {
        for i in 0..sigma.dim() {
            if (sigma.get(i, i) - 1.0).abs() > 1e-9 {
                return domain(format!("correlation matrix diagonal entry {i} is not 1"));
            }
        }
        if let EllipticalFamily::StudentT { nu } = family {
            if !(nu > 1.0) || !nu.is_finite() {
                return domain(format!("t-copula requires nu > 1, got {nu}"));
            }
        }
        Ok(Self { family, sigma })
    }

    pub fn gaussian(sigma: SpdMatrix) -> Result<Self> {
        Self::new(EllipticalFamily::Gaussian, sigma)
    }

    pub fn student_t(sigma: SpdMatrix, nu: f64) -> Result<Self> {
        Self::new(EllipticalFamily::StudentT { nu }, sigma)
    }

    /// Bivariate convenience constructor.
    pub fn bivariate(family: EllipticalFamily, rho: f64) -> Result<Self> {
        let sigma = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]))?;
        Self::new(family, sigma)
    }

    pub fn family(&self) -> EllipticalFamily {
        self.family
    }

    pub fn sigma(&self) -> &SpdMatrix {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn nu(&self) -> Option<f64> {
        match self.family {
            EllipticalFamily::StudentT { nu } => Some(nu),
            EllipticalFamily::Gaussian => None,
        }
    }

    /// Reorders variables: new variable `i` is old variable `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(self.family, self.sigma.permuted(perm)?)
    }

    fn evaluator(&self) -> DensityEval<'_> {
        DensityEval::new(self)
    }

    pub fn ln_density(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: u.len(),
            });
        }
        if u.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return domain("copula density arguments must lie in (0,1)");
        }
        let mut eval = self.evaluator();
        Ok(eval.ln_density(u))
    }
}

/// Cached constants and scratch buffers for repeated density evaluation.
struct DensityEval<'a> {
    copula: &'a EllipticalCopula,
    t: Option<StudentT>,
    constant: f64,
    z: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> DensityEval<'a> {
    fn new(copula: &'a EllipticalCopula) -> Self {
        let d = copula.dim() as f64;
        let half_ln_det = 0.5 * copula.sigma.ln_det();
        let (t, constant) = match copula.family {
            EllipticalFamily::Gaussian => (None, -half_ln_det),
            EllipticalFamily::StudentT { nu } => (
                Some(StudentT::new_unchecked(nu)),
                ln_gamma(0.5 * (nu + d)) + (d - 1.0) * ln_gamma(0.5 * nu)
                    - d * ln_gamma(0.5 * (nu + 1.0))
                    - half_ln_det,
            ),
        };
        Self {
            copula,
            t,
            constant,
            z: vec![0.0; copula.dim()],
            scratch: vec![0.0; copula.dim()],
        }
    }

    fn ln_density(&mut self, u: &[f64]) -> f64 {
        match (self.copula.family, self.t) {
            (EllipticalFamily::Gaussian, _) => {
                for (z, &ui) in self.z.iter_mut().zip(u) {
                    *z = norm_quantile(clamp_unit(ui));
                }
                let quad = self.copula.sigma.inv_quad_form(&self.z, &mut self.scratch);
                let norm_sq: f64 = self.z.iter().map(|z| z * z).sum();
                self.constant - 0.5 * (quad - norm_sq)
            }
            (EllipticalFamily::StudentT { nu }, Some(t)) => {
                self.z_from_t(u, &t);
                let quad = self.copula.sigma.inv_quad_form(&self.z, &mut self.scratch);
                let d = self.z.len() as f64;
                let margins: f64 = self.z.iter().map(|z| (z * z / nu).ln_1p()).sum();
                self.constant - 0.5 * (nu + d) * (quad / nu).ln_1p() + 0.5 * (nu + 1.0) * margins
            }
            _ => unreachable!("t evaluator without t distribution"),
        }
    }

    fn z_from_t(&mut self, u: &[f64], t: &StudentT) {
        for (z, &ui) in self.z.iter_mut().zip(u) {
            *z = t.quantile(clamp_unit(ui));
        }
    }
}

/// Copula density at `u`.
pub fn elliptical_density(c: &EllipticalCopula, u: &[f64]) -> Result<f64> {
    Ok(c.ln_density(u)?.exp())
}

/// Draws `n` vectors from the copula.
pub fn sample_elliptical<R: Rng + ?Sized>(
    c: &EllipticalCopula,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let d = c.dim();
    let mut g = vec![0.0; d];
    let mut x = vec![0.0; d];
    let chi = c.nu().map(|nu| {
        (
            ChiSquared::new(nu).expect("nu > 0"),
            StudentT::new_unchecked(nu),
        )
    });
    (0..n)
        .map(|_| {
            for gi in g.iter_mut() {
                *gi = rng.sample(StandardNormal);
            }
            c.sigma.mul_factor(&g, &mut x);
            match &chi {
                None => x.iter().map(|&xi| clamp_unit(norm_cdf(xi))).collect(),
                Some((chi2, t)) => {
                    let w: f64 = chi2.sample(rng);
                    let s = (t.nu() / w).sqrt();
                    x.iter().map(|&xi| clamp_unit(t.cdf(xi * s))).collect()
                }
            }
        })
        .collect()
}

/// Conditional law of the leading `dim - k` coordinates given the trailing `k`.
#[derive(Debug, Clone)]
pub struct ConditionalElliptical {
    family: EllipticalFamily,
    /// Σ₁₂ Σ₂₂⁻¹, (dim−k) × k.
    regression: DMatrix<f64>,
    /// Cholesky factor of Σ₁₁ − Σ₁₂ Σ₂₂⁻¹ Σ₂₁.
    cond_factor: DMatrix<f64>,
    sigma22: SpdMatrix,
}

impl ConditionalElliptical {
    pub fn new(c: &EllipticalCopula, k: usize) -> Result<Self> {
        let d = c.dim();
        if k == 0 || k >= d {
            return domain(format!(
                "conditioning block size must be in 1..{d}, got {k}"
            ));
        }
        let p = d - k;
        let s = c.sigma.entries();
        let s11 = s.view((0, 0), (p, p)).into_owned();
        let s12 = s.view((0, p), (p, k)).into_owned();
        let s22 = s.view((p, p), (k, k)).into_owned();
        let sigma22 = SpdMatrix::new(s22.clone())
            .map_err(|_| Error::Numeric("conditioning block of sigma is singular".into()))?;
        let s22_inv = s22
            .try_inverse()
            .ok_or_else(|| Error::Numeric("conditioning block of sigma is singular".into()))?;
        let regression = &s12 * s22_inv;
        let mut cond = s11 - &regression * s12.transpose();
        cond = (&cond + cond.transpose()) * 0.5;
        let cond_factor = cholesky_factor(&cond)
            .map_err(|e| Error::Numeric(format!("conditional covariance: {e}")))?;
        Ok(Self {
            family: c.family,
            regression,
            cond_factor,
            sigma22,
        })
    }

    pub fn free_dim(&self) -> usize {
        self.cond_factor.nrows()
    }

    pub fn cond_dim(&self) -> usize {
        self.sigma22.dim()
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        cond: &[f64],
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let k = self.cond_dim();
        if cond.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: cond.len(),
            });
        }
        if cond.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return domain("conditioning values must lie in (0,1)");
        }
        let p = self.free_dim();
        let t = match self.family {
            EllipticalFamily::StudentT { nu } => Some(StudentT::new_unchecked(nu)),
            EllipticalFamily::Gaussian => None,
        };
        let z2: Vec<f64> = cond
            .iter()
            .map(|&v| match &t {
                Some(t) => t.quantile(clamp_unit(v)),
                None => norm_quantile(clamp_unit(v)),
            })
            .collect();
        let loc: Vec<f64> = (0..p)
            .map(|i| (0..k).map(|j| self.regression[(i, j)] * z2[j]).sum())
            .collect();

        let mut g = vec![0.0; p];
        let mut out = Vec::with_capacity(n);
        match (self.family, t) {
            (EllipticalFamily::Gaussian, _) => {
                for _ in 0..n {
                    for gi in g.iter_mut() {
                        *gi = rng.sample(StandardNormal);
                    }
                    let row = (0..p)
                        .map(|i| {
                            let x = loc[i]
                                + (0..=i)
                                    .map(|j| self.cond_factor[(i, j)] * g[j])
                                    .sum::<f64>();
                            clamp_unit(norm_cdf(x))
                        })
                        .collect();
                    out.push(row);
                }
            }
            (EllipticalFamily::StudentT { nu }, Some(t)) => {
                let mut scratch = vec![0.0; k];
                let quad = self.sigma22.inv_quad_form(&z2, &mut scratch);
                let df = nu + k as f64;
                let scale = ((nu + quad) / df).sqrt();
                let chi2 = ChiSquared::new(df).expect("df > 0");
                for _ in 0..n {
                    for gi in g.iter_mut() {
                        *gi = rng.sample(StandardNormal);
                    }
                    let w: f64 = chi2.sample(rng);
                    let mix = scale * (df / w).sqrt();
                    let row = (0..p)
                        .map(|i| {
                            let e = (0..=i)
                                .map(|j| self.cond_factor[(i, j)] * g[j])
                                .sum::<f64>();
                            clamp_unit(t.cdf(loc[i] + mix * e))
                        })
                        .collect();
                    out.push(row);
                }
            }
            _ => unreachable!(),
        }
        Ok(out)
    }
}

/// Draws `n` vectors of the leading `dim - k` coordinates conditional on the
/// trailing `k` coordinates being `cond`.
pub fn conditional_sample_elliptical<R: Rng + ?Sized>(
    c: &EllipticalCopula,
    cond: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    ConditionalElliptical::new(c, cond.len())?.sample(cond, n, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalFit {
    pub copula: EllipticalCopula,
    pub loglik: f64,
}

/// Sum of log-densities over rows given as columns (`columns[j][i]`).
fn loglik_columns(c: &EllipticalCopula, columns: &[Vec<f64>]) -> f64 {
    let n = columns[0].len();
    let d = columns.len();
    let mut eval = c.evaluator();
    let mut row = vec![0.0; d];
    (0..n)
        .map(|i| {
            for j in 0..d {
                row[j] = columns[j][i];
            }
            eval.ln_density(&row)
        })
        .sum()
}

/// Correlation matrix from pairwise Kendall's tau, ρ = sin(πτ/2), repaired to SPD.
pub fn tau_correlation(columns: &[Vec<f64>]) -> Result<SpdMatrix> {
    let d = columns.len();
    let mut m = DMatrix::identity(d, d);
    for i in 0..d {
        for j in 0..i {
            let rho = (PI * kendall_tau(&columns[i], &columns[j]) / 2.0).sin();
            m[(i, j)] = rho;
            m[(j, i)] = rho;
        }
    }
    SpdMatrix::correlation_repaired(m)
}

/// Fits a Gaussian or t copula to pseudo-observations stored as columns.
pub fn fit_elliptical(kind: EllipticalKind, columns: &[Vec<f64>]) -> Result<EllipticalFit> {
    let d = columns.len();
    if d < 2 {
        return Err(Error::Fit(
            "elliptical copula needs at least 2 columns".into(),
        ));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Fit("columns have unequal lengths".into()));
    }
    if n < ROWS_PER_DIM * d {
        return Err(Error::Fit(format!(
            "need at least {} rows for dimension {d}, got {n}",
            ROWS_PER_DIM * d
        )));
    }
    if columns.iter().flatten().any(|&x| !(x > 0.0 && x < 1.0)) {
        return domain("pseudo-observations must lie in (0,1)");
    }
    let sigma = tau_correlation(columns)?;
    match kind {
        EllipticalKind::Gaussian => {
            let copula = EllipticalCopula::gaussian(sigma)?;
            let loglik = loglik_columns(&copula, columns);
            Ok(EllipticalFit { copula, loglik })
        }
        EllipticalKind::StudentT => {
            let mut best: Option<EllipticalFit> = None;
            for &nu in NU_GRID.iter() {
                let copula = EllipticalCopula::student_t(sigma.clone(), nu)?;
                let loglik = loglik_columns(&copula, columns);
                if loglik.is_finite() && best.as_ref().map_or(true, |b| loglik > b.loglik) {
                    best = Some(EllipticalFit { copula, loglik });
                }
            }
            best.ok_or_else(|| Error::Fit("t-copula likelihood not finite on the nu grid".into()))
        }
    }
}

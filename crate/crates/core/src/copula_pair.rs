//! Bivariate copula families: densities, h-functions and their inverses,
//! simulation, and maximum-likelihood fitting with AIC-based family selection.
//!
//! `h_function(c, u, v)` is the conditional distribution ∂C(u,v)/∂v. All
//! families here are exchangeable, so ∂C(u,v)/∂u equals `h_function(c, v, u)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::concordance::kendall_tau;
use crate::error::{domain, Error, Result};
use crate::numerics::optim::brent_minimize;
use crate::numerics::{norm_cdf, norm_quantile, StudentT};

/// Pseudo-observations are clamped to `[CLAMP, 1 - CLAMP]` before evaluation.
pub const CLAMP: f64 = 1e-10;

/// Degrees-of-freedom grid for the t-copula profile likelihood.
pub const NU_GRID: [f64; 10] = [2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0, 30.0];

const RHO_MAX: f64 = 0.999;
const CLAYTON_MAX: f64 = 60.0;
const GUMBEL_MAX: f64 = 40.0;
const MIN_FIT_PAIRS: usize = 30;

#[inline]
pub(crate) fn clamp_unit(u: f64) -> f64 {
    u.clamp(CLAMP, 1.0 - CLAMP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairFamily {
    Independence,
    Gaussian,
    #[serde(rename = "t")]
    StudentT,
    Clayton,
    Gumbel,
}

impl PairFamily {
    pub const ALL: [PairFamily; 5] = [
        PairFamily::Independence,
        PairFamily::Gaussian,
        PairFamily::StudentT,
        PairFamily::Clayton,
        PairFamily::Gumbel,
    ];

    /// Number of free parameters (used by AIC).
    pub fn n_params(self) -> usize {
        match self {
            PairFamily::Independence => 0,
            PairFamily::StudentT => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PairFamily::Independence => "independence",
            PairFamily::Gaussian => "gaussian",
            PairFamily::StudentT => "t",
            PairFamily::Clayton => "clayton",
            PairFamily::Gumbel => "gumbel",
        }
    }
}

impl std::str::FromStr for PairFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "indep" => Ok(PairFamily::Independence),
            "gaussian" | "normal" => Ok(PairFamily::Gaussian),
            "t" | "student_t" | "student-t" => Ok(PairFamily::StudentT),
            "clayton" => Ok(PairFamily::Clayton),
            "gumbel" => Ok(PairFamily::Gumbel),
            other => Err(Error::Config(format!(
                "unknown pair copula family '{other}'"
            ))),
        }
    }
}

/// A bivariate copula with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PairCopula {
    Independence,
    Gaussian {
        rho: f64,
    },
    #[serde(rename = "t")]
    StudentT {
        rho: f64,
        nu: f64,
    },
    Clayton {
        theta: f64,
    },
    Gumbel {
        theta: f64,
    },
}

impl PairCopula {
    pub fn gaussian(rho: f64) -> Result<Self> {
        let c = PairCopula::Gaussian { rho };
        c.validate()?;
        Ok(c)
    }

    pub fn student_t(rho: f64, nu: f64) -> Result<Self> {
        let c = PairCopula::StudentT { rho, nu };
        c.validate()?;
        Ok(c)
    }

    pub fn clayton(theta: f64) -> Result<Self> {
        let c = PairCopula::Clayton { theta };
        c.validate()?;
        Ok(c)
    }

    pub fn gumbel(theta: f64) -> Result<Self> {
        let c = PairCopula::Gumbel { theta };
        c.validate()?;
        Ok(c)
    }

    pub fn family(&self) -> PairFamily {
        match self {
            PairCopula::Independence => PairFamily::Independence,
            PairCopula::Gaussian { .. } => PairFamily::Gaussian,
            PairCopula::StudentT { .. } => PairFamily::StudentT,
            PairCopula::Clayton { .. } => PairFamily::Clayton,
            PairCopula::Gumbel { .. } => PairFamily::Gumbel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PairCopula::Independence => true,
            PairCopula::Gaussian { rho } => rho.abs() < 1.0,
            PairCopula::StudentT { rho, nu } => rho.abs() < 1.0 && nu > 1.0 && nu.is_finite(),
            PairCopula::Clayton { theta } => theta > 0.0 && theta.is_finite(),
            PairCopula::Gumbel { theta } => theta >= 1.0 && theta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            domain(format!("parameters outside the family domain: {self:?}"))
        }
    }

    /// Theoretical Kendall's tau.
    pub fn kendall_tau(&self) -> f64 {
        match *self {
            PairCopula::Independence => 0.0,
            PairCopula::Gaussian { rho } | PairCopula::StudentT { rho, .. } => {
                2.0 / PI * rho.asin()
            }
            PairCopula::Clayton { theta } => theta / (theta + 2.0),
            PairCopula::Gumbel { theta } => 1.0 - 1.0 / theta,
        }
    }

    /// Precomputes family constants for repeated evaluation.
    pub fn evaluator(&self) -> PairEval {
        PairEval::new(*self)
    }
}

/// A pair copula with cached constants (t distributions, log-normalizers).
#[derive(Debug, Clone, Copy)]
pub struct PairEval {
    copula: PairCopula,
    t: Option<(StudentT, StudentT, f64)>,
}

impl PairEval {
    fn new(copula: PairCopula) -> Self {
        let t = match copula {
            PairCopula::StudentT { nu, .. } => Some((
                StudentT::new_unchecked(nu),
                StudentT::new_unchecked(nu + 1.0),
                t_copula_log_const(nu),
            )),
            _ => None,
        };
        Self { copula, t }
    }

    pub fn copula(&self) -> &PairCopula {
        &self.copula
    }

    pub fn ln_density(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        match self.copula {
            PairCopula::Independence => 0.0,
            PairCopula::Gaussian { rho } => {
                gaussian_ln_density(norm_quantile(u), norm_quantile(v), rho)
            }
            PairCopula::StudentT { rho, nu } => {
                let (tn, _, k) = self.t.expect("t evaluator");
                let x = tn.quantile(u);
                let y = tn.quantile(v);
                t_ln_density(x, y, rho, nu, k)
            }
            PairCopula::Clayton { theta } => clayton_ln_density(u.ln(), v.ln(), theta),
            PairCopula::Gumbel { theta } => gumbel_ln_density(-u.ln(), -v.ln(), theta),
        }
    }

    pub fn density(&self, u: f64, v: f64) -> f64 {
        self.ln_density(u, v).exp()
    }

    /// ∂C(u,v)/∂v.
    pub fn h(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        match self.copula {
            PairCopula::Independence => u,
            PairCopula::Gaussian { rho } => {
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                norm_cdf((x - rho * y) / (1.0 - rho * rho).sqrt())
            }
            PairCopula::StudentT { rho, nu } => {
                let (tn, tn1, _) = self.t.expect("t evaluator");
                let (x, y) = (tn.quantile(u), tn.quantile(v));
                let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
                tn1.cdf((x - rho * y) / scale)
            }
            PairCopula::Clayton { theta } => {
                let (lu, lv) = (u.ln(), v.ln());
                let s = (-theta * lu).exp() + (-theta * lv).exp() - 1.0;
                ((-theta - 1.0) * lv + (-1.0 - 1.0 / theta) * s.ln()).exp()
            }
            PairCopula::Gumbel { theta } => {
                let (a, b) = (-u.ln(), -v.ln());
                let big_a = a.powf(theta) + b.powf(theta);
                let s = big_a.powf(1.0 / theta);
                (-s + b + (theta - 1.0) * b.ln() + (1.0 / theta - 1.0) * big_a.ln()).exp()
            }
        }
        .clamp(0.0, 1.0)
    }

    /// Inverse of `h` in its first argument: returns u with h(u | v) = p.
    pub fn h_inverse(&self, p: f64, v: f64) -> Result<f64> {
        let (p, v) = (clamp_unit(p), clamp_unit(v));
        match self.copula {
            PairCopula::Independence => Ok(p),
            PairCopula::Gaussian { rho } => Ok(norm_cdf(
                (1.0 - rho * rho).sqrt() * norm_quantile(p) + rho * norm_quantile(v),
            )),
            PairCopula::StudentT { rho, nu } => {
                let (tn, tn1, _) = self.t.expect("t evaluator");
                let y = tn.quantile(v);
                let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
                Ok(tn.cdf(tn1.quantile(p) * scale + rho * y))
            }
            PairCopula::Clayton { theta } => {
                let lv = v.ln();
                let a = (-theta / (1.0 + theta)) * (p.ln() + (theta + 1.0) * lv);
                let s = a.exp() + 1.0 - (-theta * lv).exp();
                Ok((-s.ln() / theta).exp())
            }
            PairCopula::Gumbel { .. } => self.h_inverse_numeric(p, v),
        }
    }

    /// Generic inverse of `h` by safeguarded Newton iteration (density as the
    /// derivative) with bisection fallback.
    pub fn h_inverse_numeric(&self, p: f64, v: f64) -> Result<f64> {
        let (p, v) = (clamp_unit(p), clamp_unit(v));
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut u = p;
        for _ in 0..300 {
            let f = self.h(u, v) - p;
            if f == 0.0 {
                return Ok(u);
            }
            if f > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let dens = self.density(u, v);
            let mut next = u - f / dens;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - u).abs() <= 1e-15 * u.max(1e-300) || hi - lo <= 1e-16 {
                return Ok(next);
            }
            u = next;
        }
        Err(Error::Numeric(format!(
            "h-inverse did not converge for {:?} at p = {p}, v = {v}",
            self.copula
        )))
    }
}

fn t_copula_log_const(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 2.0)) + ln_gamma(0.5 * nu) - 2.0 * ln_gamma(0.5 * (nu + 1.0))
}

#[inline]
fn gaussian_ln_density(x: f64, y: f64, rho: f64) -> f64 {
    let r2 = 1.0 - rho * rho;
    -0.5 * r2.ln() - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)
}

#[inline]
fn t_ln_density(x: f64, y: f64, rho: f64, nu: f64, log_const: f64) -> f64 {
    let r2 = 1.0 - rho * rho;
    let q = (x * x + y * y - 2.0 * rho * x * y) / (nu * r2);
    log_const - 0.5 * r2.ln() - 0.5 * (nu + 2.0) * q.ln_1p()
        + 0.5 * (nu + 1.0) * ((x * x / nu).ln_1p() + (y * y / nu).ln_1p())
}

#[inline]
fn clayton_ln_density(lu: f64, lv: f64, theta: f64) -> f64 {
    let s = (-theta * lu).exp() + (-theta * lv).exp() - 1.0;
    theta.ln_1p() - (1.0 + theta) * (lu + lv) - (2.0 + 1.0 / theta) * s.ln()
}

/// Gumbel log-density in terms of a = -ln u, b = -ln v.
#[inline]
fn gumbel_ln_density(a: f64, b: f64, theta: f64) -> f64 {
    let big_a = a.powf(theta) + b.powf(theta);
    let s = big_a.powf(1.0 / theta);
    -s + a
        + b
        + (theta - 1.0) * (a.ln() + b.ln())
        + (2.0 / theta - 2.0) * big_a.ln()
        + ((theta - 1.0) / s).ln_1p()
}

fn check_unit(u: f64, name: &str) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        domain(format!("{name} must lie in (0,1), got {u}"))
    }
}

/// Copula density c(u, v).
pub fn pair_density(c: &PairCopula, u: f64, v: f64) -> Result<f64> {
    c.validate()?;
    check_unit(u, "u")?;
    check_unit(v, "v")?;
    Ok(c.evaluator().density(u, v))
}

/// Conditional distribution h(u | v) = ∂C(u,v)/∂v.
pub fn h_function(c: &PairCopula, u: f64, v: f64) -> Result<f64> {
    c.validate()?;
    check_unit(u, "u")?;
    check_unit(v, "v")?;
    Ok(c.evaluator().h(u, v))
}

/// Solves h(u | v) = p for u.
pub fn h_inverse(c: &PairCopula, p: f64, v: f64) -> Result<f64> {
    c.validate()?;
    check_unit(p, "p")?;
    check_unit(v, "v")?;
    c.evaluator().h_inverse(p, v)
}

/// Draws `n` pairs (u, v): v uniform, u = h⁻¹(w | v) for an independent uniform w.
pub fn sample_pair<R: Rng + ?Sized>(
    c: &PairCopula,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    c.validate()?;
    let eval = c.evaluator();
    (0..n)
        .map(|_| {
            let v: f64 = rng.random();
            let w: f64 = rng.random();
            Ok((eval.h_inverse(w, v)?, clamp_unit(v)))
        })
        .collect()
}

/// Starting parameters from Kendall's tau.
///
/// Gaussian/t: ρ = sin(πτ/2) (t starts at ν = 10); Clayton: θ = 2τ/(1−τ);
/// Gumbel: θ = 1/(1−τ). At τ = 0 Clayton sits just inside its independence
/// boundary (θ = 1e-6) and Gumbel at θ = 1.
pub fn kendall_tau_invert(family: PairFamily, tau: f64) -> Result<PairCopula> {
    if !(tau > -1.0 && tau < 1.0) {
        return domain(format!(
            "tau must lie in (-1,1) for {}, got {tau}",
            family.name()
        ));
    }
    let rho = (PI * tau / 2.0).sin().clamp(-RHO_MAX, RHO_MAX);
    match family {
        PairFamily::Independence => Ok(PairCopula::Independence),
        PairFamily::Gaussian => Ok(PairCopula::Gaussian { rho }),
        PairFamily::StudentT => Ok(PairCopula::StudentT { rho, nu: 10.0 }),
        PairFamily::Clayton | PairFamily::Gumbel if tau < 0.0 => domain(format!(
            "{} copula cannot represent negative dependence (tau = {tau})",
            family.name()
        )),
        PairFamily::Clayton => Ok(PairCopula::Clayton {
            theta: (2.0 * tau / (1.0 - tau)).clamp(1e-6, CLAYTON_MAX),
        }),
        PairFamily::Gumbel => Ok(PairCopula::Gumbel {
            theta: (1.0 / (1.0 - tau)).clamp(1.0, GUMBEL_MAX),
        }),
    }
}

/// Result of a single-pair maximum-likelihood fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFit {
    pub copula: PairCopula,
    pub loglik: f64,
    /// False when the optimizer could not improve on the τ-inversion start.
    pub converged: bool,
}

impl PairFit {
    pub fn aic(&self) -> f64 {
        2.0 * self.copula.family().n_params() as f64 - 2.0 * self.loglik
    }
}

/// Sum of log-densities over the sample.
pub fn pair_loglik(c: &PairCopula, u: &[f64], v: &[f64]) -> f64 {
    let eval = c.evaluator();
    u.iter().zip(v).map(|(&a, &b)| eval.ln_density(a, b)).sum()
}

fn check_fit_data(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: v.len(),
        });
    }
    if u.len() < MIN_FIT_PAIRS {
        return Err(Error::Fit(format!(
            "pair fit needs at least {MIN_FIT_PAIRS} pairs, got {}",
            u.len()
        )));
    }
    if u.iter().chain(v).any(|&x| !(x > 0.0 && x < 1.0)) {
        return domain("pair fit data must lie strictly inside (0,1)^2");
    }
    Ok(())
}

/// Maximizes `f` over `[lo, hi] ⊂ [hard_lo, hard_hi]`, widening the bracket
/// while the optimum sits on an interior edge.
fn maximize_bracketed(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    hard_lo: f64,
    hard_hi: f64,
) -> Option<(f64, f64)> {
    lo = lo.max(hard_lo);
    hi = hi.min(hard_hi);
    for _ in 0..6 {
        let m = brent_minimize(|x| -f(x), lo, hi, 1e-7)?;
        let width = hi - lo;
        let at_lo = m.x - lo < 1e-3 * width && lo > hard_lo;
        let at_hi = hi - m.x < 1e-3 * width && hi < hard_hi;
        if !(at_lo || at_hi) {
            return Some((m.x, -m.value));
        }
        if at_lo {
            lo = (lo - width).max(hard_lo);
        }
        if at_hi {
            hi = (hi + width).min(hard_hi);
        }
    }
    let m = brent_minimize(|x| -f(x), lo, hi, 1e-7)?;
    Some((m.x, -m.value))
}

struct GaussianStats {
    n: f64,
    sum_sq: f64,
    sum_cross: f64,
}

impl GaussianStats {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let mut sum_sq = 0.0;
        let mut sum_cross = 0.0;
        for (&a, &b) in x.iter().zip(y) {
            sum_sq += a * a + b * b;
            sum_cross += a * b;
        }
        Self {
            n: x.len() as f64,
            sum_sq,
            sum_cross,
        }
    }

    fn loglik(&self, rho: f64) -> f64 {
        let r2 = 1.0 - rho * rho;
        -0.5 * self.n * r2.ln()
            - (rho * rho * self.sum_sq - 2.0 * rho * self.sum_cross) / (2.0 * r2)
    }
}

fn fit_with_tau(family: PairFamily, u: &[f64], v: &[f64], tau: f64) -> Result<PairFit> {
    let start = kendall_tau_invert(family, tau)?;
    let u: Vec<f64> = u.iter().map(|&x| clamp_unit(x)).collect();
    let v: Vec<f64> = v.iter().map(|&x| clamp_unit(x)).collect();

    let best: Option<(PairCopula, f64)> = match start {
        PairCopula::Independence => Some((PairCopula::Independence, 0.0)),
        PairCopula::Gaussian { rho: rho0 } => {
            let x: Vec<f64> = u.iter().map(|&a| norm_quantile(a)).collect();
            let y: Vec<f64> = v.iter().map(|&b| norm_quantile(b)).collect();
            let stats = GaussianStats::new(&x, &y);
            maximize_bracketed(
                |r| stats.loglik(r),
                rho0 - 0.2,
                rho0 + 0.2,
                -RHO_MAX,
                RHO_MAX,
            )
            .map(|(rho, ll)| (PairCopula::Gaussian { rho }, ll))
        }
        PairCopula::StudentT { rho: rho0, .. } => fit_student_t(&u, &v, rho0),
        PairCopula::Clayton { theta: theta0 } => {
            let lu: Vec<f64> = u.iter().map(|a| a.ln()).collect();
            let lv: Vec<f64> = v.iter().map(|b| b.ln()).collect();
            let ll = |log_theta: f64| {
                let theta = log_theta.exp();
                lu.iter()
                    .zip(&lv)
                    .map(|(&a, &b)| clayton_ln_density(a, b, theta))
                    .sum::<f64>()
            };
            let l0 = theta0.max(1e-3).ln();
            maximize_bracketed(ll, l0 - 1.0, l0 + 1.0, (1e-4f64).ln(), CLAYTON_MAX.ln())
                .map(|(lt, ll)| (PairCopula::Clayton { theta: lt.exp() }, ll))
        }
        PairCopula::Gumbel { theta: theta0 } => {
            let a: Vec<f64> = u.iter().map(|x| -x.ln()).collect();
            let b: Vec<f64> = v.iter().map(|x| -x.ln()).collect();
            let ll = |log_theta: f64| {
                let theta = log_theta.exp();
                a.iter()
                    .zip(&b)
                    .map(|(&p, &q)| gumbel_ln_density(p, q, theta))
                    .sum::<f64>()
            };
            let l0 = theta0.ln();
            maximize_bracketed(ll, l0 - 0.5, l0 + 0.5, 0.0, GUMBEL_MAX.ln())
                .map(|(lt, ll)| (PairCopula::Gumbel { theta: lt.exp() }, ll))
        }
    };

    let start_ll = pair_loglik(&start, &u, &v);
    match best {
        Some((copula, ll)) if ll.is_finite() && ll >= start_ll - 1e-9 => {
            // Report the likelihood through the same evaluation path as densities.
            let loglik = pair_loglik(&copula, &u, &v);
            Ok(PairFit {
                copula,
                loglik,
                converged: true,
            })
        }
        _ if start_ll.is_finite() => Ok(PairFit {
            copula: start,
            loglik: start_ll,
            converged: false,
        }),
        _ => Err(Error::Fit(format!(
            "{} fit produced a non-finite likelihood",
            family.name()
        ))),
    }
}

/// Profile likelihood for the t-copula: ρ refined per ν on the fixed grid.
fn fit_student_t(u: &[f64], v: &[f64], rho0: f64) -> Option<(PairCopula, f64)> {
    let mut best: Option<(PairCopula, f64)> = None;
    let mut x = vec![0.0; u.len()];
    let mut y = vec![0.0; v.len()];
    for &nu in NU_GRID.iter() {
        let tn = StudentT::new_unchecked(nu);
        for (xi, &a) in x.iter_mut().zip(u) {
            *xi = tn.quantile(a);
        }
        for (yi, &b) in y.iter_mut().zip(v) {
            *yi = tn.quantile(b);
        }
        let k = t_copula_log_const(nu);
        let margin: f64 = x
            .iter()
            .zip(&y)
            .map(|(&a, &b)| 0.5 * (nu + 1.0) * ((a * a / nu).ln_1p() + (b * b / nu).ln_1p()))
            .sum();
        let n = x.len() as f64;
        let ll = |rho: f64| {
            let r2 = 1.0 - rho * rho;
            let core: f64 = x
                .iter()
                .zip(&y)
                .map(|(&a, &b)| ((a * a + b * b - 2.0 * rho * a * b) / (nu * r2)).ln_1p())
                .sum();
            n * (k - 0.5 * r2.ln()) - 0.5 * (nu + 2.0) * core + margin
        };
        if let Some((rho, value)) =
            maximize_bracketed(ll, rho0 - 0.15, rho0 + 0.15, -RHO_MAX, RHO_MAX)
        {
            if best.map_or(true, |(_, b)| value > b) {
                best = Some((PairCopula::StudentT { rho, nu }, value));
            }
        }
    }
    best
}

/// Maximum-likelihood fit of one family to pseudo-observation pairs `(u[i], v[i])`.
pub fn fit_pair_mle(family: PairFamily, u: &[f64], v: &[f64]) -> Result<PairFit> {
    check_fit_data(u, v)?;
    fit_with_tau(family, u, v, kendall_tau(u, v))
}

/// Fits every candidate family and returns the AIC minimizer. Clayton and
/// Gumbel are skipped for negatively dependent data.
pub fn select_pair_family(u: &[f64], v: &[f64], candidates: &[PairFamily]) -> Result<PairFit> {
    if candidates.is_empty() {
        return Err(Error::Selection("empty candidate family set".into()));
    }
    check_fit_data(u, v)?;
    let tau = kendall_tau(u, v);
    let mut best: Option<PairFit> = None;
    for &family in candidates {
        if matches!(family, PairFamily::Clayton | PairFamily::Gumbel) && tau <= 0.0 {
            continue;
        }
        if let Ok(fit) = fit_with_tau(family, u, v, tau) {
            if best.map_or(true, |b| fit.aic() < b.aic()) {
                best = Some(fit);
            }
        }
    }
    best.ok_or_else(|| Error::Selection("no candidate family could be fitted".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concordance::tests::brute_force_tau;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn families_grid() -> Vec<PairCopula> {
        vec![
            PairCopula::Independence,
            PairCopula::Gaussian { rho: 0.4 },
            PairCopula::Gaussian { rho: -0.7 },
            PairCopula::StudentT { rho: 0.4, nu: 4.0 },
            PairCopula::StudentT { rho: -0.3, nu: 2.5 },
            PairCopula::Clayton { theta: 2.0 },
            PairCopula::Clayton { theta: 0.5 },
            PairCopula::Gumbel { theta: 2.0 },
            PairCopula::Gumbel { theta: 1.3 },
        ]
    }

    fn clayton_cdf(u: f64, v: f64, theta: f64) -> f64 {
        (u.powf(-theta) + v.powf(-theta) - 1.0).powf(-1.0 / theta)
    }

    fn gumbel_cdf(u: f64, v: f64, theta: f64) -> f64 {
        (-((-u.ln()).powf(theta) + (-v.ln()).powf(theta)).powf(1.0 / theta)).exp()
    }

    /// h(u|v) = ∫₀ᵘ c(s, v) ds by adaptive Simpson on s = u·t², which removes
    /// the integrable singularity at 0.
    fn integrated_h(c: &PairCopula, u: f64, v: f64) -> f64 {
        let e = c.evaluator();
        let f = |t: f64| {
            if t == 0.0 {
                0.0
            } else {
                e.density(u * t * t, v) * 2.0 * u * t
            }
        };
        adaptive_simpson(&f, 0.0, 1.0, 1e-10, 40)
    }

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, depth)
    }

    #[test]
    fn density_examples() {
        for (u, v) in [(0.1, 0.9), (0.5, 0.5), (0.33, 0.02)] {
            assert!(
                (pair_density(&PairCopula::Gaussian { rho: 0.0 }, u, v).unwrap() - 1.0).abs()
                    < 1e-14
            );
            assert!(
                (pair_density(&PairCopula::Gumbel { theta: 1.0 }, u, v).unwrap() - 1.0).abs()
                    < 1e-12
            );
        }
        let theta: f64 = 2.0;
        let (u, v): (f64, f64) = (0.5, 0.5);
        let closed = (1.0 + theta)
            * (u * v).powf(-1.0 - theta)
            * (u.powf(-theta) + v.powf(-theta) - 1.0).powf(-2.0 - 1.0 / theta);
        // 2-D numeric differentiation of the Clayton CDF
        let eps = 1e-4;
        let fd = (clayton_cdf(u + eps, v + eps, theta)
            - clayton_cdf(u + eps, v - eps, theta)
            - clayton_cdf(u - eps, v + eps, theta)
            + clayton_cdf(u - eps, v - eps, theta))
            / (4.0 * eps * eps);
        assert!((closed - fd).abs() < 1e-5 * closed);
        let got = pair_density(&PairCopula::Clayton { theta: 2.0 }, u, v).unwrap();
        assert!((got - closed).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(pair_density(&PairCopula::Gaussian { rho: 1.2 }, 0.5, 0.5).is_err());
        assert!(pair_density(&PairCopula::Clayton { theta: -1.0 }, 0.5, 0.5).is_err());
        assert!(pair_density(&PairCopula::Gumbel { theta: 0.5 }, 0.5, 0.5).is_err());
        assert!(pair_density(&PairCopula::StudentT { rho: 0.2, nu: 0.5 }, 0.5, 0.5).is_err());
        assert!(h_function(&PairCopula::Gaussian { rho: 0.2 }, 0.0, 0.5).is_err());
    }

    #[test]
    fn h_examples() {
        assert_eq!(
            h_function(&PairCopula::Independence, 0.3, 0.8).unwrap(),
            0.3
        );
        let g = PairCopula::Gaussian { rho: 0.0 };
        assert!((h_function(&g, 0.3, 0.8).unwrap() - 0.3).abs() < 1e-12);
        let c = PairCopula::Clayton { theta: 2.0 };
        let eps = 1e-6;
        let fd =
            (clayton_cdf(0.3, 0.7 + eps, 2.0) - clayton_cdf(0.3, 0.7 - eps, 2.0)) / (2.0 * eps);
        assert!((h_function(&c, 0.3, 0.7).unwrap() - fd).abs() < 1e-5);
    }

    #[test]
    fn h_matches_cdf_finite_difference_and_density_integral() {
        let grid = [0.05, 0.2, 0.5, 0.8, 0.95];
        let eps = 1e-6;
        for c in families_grid() {
            for &u in &grid {
                for &v in &grid {
                    let h = h_function(&c, u, v).unwrap();
                    let fd = match c {
                        PairCopula::Clayton { theta } => Some(
                            (clayton_cdf(u, v + eps, theta) - clayton_cdf(u, v - eps, theta))
                                / (2.0 * eps),
                        ),
                        PairCopula::Gumbel { theta } => Some(
                            (gumbel_cdf(u, v + eps, theta) - gumbel_cdf(u, v - eps, theta))
                                / (2.0 * eps),
                        ),
                        PairCopula::Independence => Some(u),
                        _ => None,
                    };
                    if let Some(fd) = fd {
                        assert!((h - fd).abs() < 1e-5, "{c:?} ({u},{v}): {h} vs fd {fd}");
                    }
                    let integ = integrated_h(&c, u, v);
                    assert!(
                        (h - integ).abs() < 1e-5,
                        "{c:?} ({u},{v}): {h} vs integral {integ}"
                    );
                }
            }
        }
    }

    #[test]
    fn exchangeable_densities() {
        for c in families_grid() {
            for (u, v) in [(0.1, 0.7), (0.03, 0.5), (0.9, 0.2)] {
                let a = pair_density(&c, u, v).unwrap();
                let b = pair_density(&c, v, u).unwrap();
                assert!((a - b).abs() < 1e-10 * a.max(1.0), "{c:?}");
            }
        }
    }

    #[test]
    fn t_nests_gaussian() {
        let t = PairCopula::StudentT { rho: 0.4, nu: 1e4 };
        let g = PairCopula::Gaussian { rho: 0.4 };
        for u in [0.05, 0.3, 0.5, 0.7, 0.95] {
            for v in [0.05, 0.3, 0.5, 0.7, 0.95] {
                let a = pair_density(&t, u, v).unwrap();
                let b = pair_density(&g, u, v).unwrap();
                assert!((a - b).abs() / b < 1e-3, "({u},{v}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn h_inverse_examples() {
        assert_eq!(h_inverse(&PairCopula::Independence, 0.3, 0.6).unwrap(), 0.3);
        let g = PairCopula::Gaussian { rho: 0.4 };
        let e = g.evaluator();
        for p in [0.01, 0.2, 0.5, 0.77, 0.99] {
            for v in [0.05, 0.5, 0.93] {
                let closed = e.h_inverse(p, v).unwrap();
                let generic = e.h_inverse_numeric(p, v).unwrap();
                assert!((closed - generic).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn h_inverse_roundtrip_grid() {
        for c in families_grid() {
            let e = c.evaluator();
            for i in 0..20 {
                for j in 0..20 {
                    let u = (i as f64 + 0.5) / 20.0;
                    let v = (j as f64 + 0.5) / 20.0;
                    let back = e.h_inverse(e.h(u, v), v).unwrap();
                    assert!((back - u).abs() < 1e-8, "{c:?} ({u},{v}) -> {back}");
                }
            }
        }
    }

    #[test]
    fn sampled_tau_matches_theory() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (c, tol) in [
            (PairCopula::Independence, 0.03),
            (PairCopula::Gaussian { rho: 0.4 }, 0.02),
            (PairCopula::Clayton { theta: 2.0 }, 0.02),
        ] {
            let s = sample_pair(&c, 10_000, &mut rng).unwrap();
            let (u, v): (Vec<f64>, Vec<f64>) = s.into_iter().unzip();
            let tau = kendall_tau(&u, &v);
            assert!((tau - c.kendall_tau()).abs() < tol, "{c:?}: {tau}");
        }
        let g = sample_pair(&PairCopula::Gaussian { rho: 0.4 }, 1500, &mut rng).unwrap();
        let (u, v): (Vec<f64>, Vec<f64>) = g.into_iter().unzip();
        let theory = 2.0 / PI * 0.4f64.asin();
        assert!((theory - 0.2620).abs() < 1e-4);
        assert!((brute_force_tau(&u, &v) - theory).abs() < 0.05);
    }

    #[test]
    fn tau_inversion() {
        assert_eq!(
            kendall_tau_invert(PairFamily::Gaussian, 0.0).unwrap(),
            PairCopula::Gaussian { rho: 0.0 }
        );
        match kendall_tau_invert(PairFamily::Clayton, 0.0).unwrap() {
            PairCopula::Clayton { theta } => assert!(theta <= 1e-6),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            kendall_tau_invert(PairFamily::Gumbel, 0.0).unwrap(),
            PairCopula::Gumbel { theta: 1.0 }
        );
        match kendall_tau_invert(PairFamily::Clayton, 0.5).unwrap() {
            PairCopula::Clayton { theta } => assert!((theta - 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        match kendall_tau_invert(PairFamily::Gumbel, 0.5).unwrap() {
            PairCopula::Gumbel { theta } => assert!((theta - 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let err = kendall_tau_invert(PairFamily::Clayton, -0.2).unwrap_err();
        assert!(err.to_string().contains("clayton"));
        assert!(kendall_tau_invert(PairFamily::Gumbel, -0.2)
            .unwrap_err()
            .to_string()
            .contains("gumbel"));
    }

    fn simulate(c: PairCopula, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_pair(&c, n, &mut rng).unwrap().into_iter().unzip()
    }

    #[test]
    fn mle_recovery() {
        let (u, v) = simulate(PairCopula::Gaussian { rho: 0.4 }, 5000, 1);
        match fit_pair_mle(PairFamily::Gaussian, &u, &v).unwrap().copula {
            PairCopula::Gaussian { rho } => assert!((0.37..=0.43).contains(&rho), "{rho}"),
            other => panic!("{other:?}"),
        }
        let (u, v) = simulate(PairCopula::Clayton { theta: 2.0 }, 5000, 2);
        match fit_pair_mle(PairFamily::Clayton, &u, &v).unwrap().copula {
            PairCopula::Clayton { theta } => assert!((1.8..=2.2).contains(&theta), "{theta}"),
            other => panic!("{other:?}"),
        }
        let (u, v) = simulate(PairCopula::Independence, 5000, 3);
        match fit_pair_mle(PairFamily::Gaussian, &u, &v).unwrap().copula {
            PairCopula::Gaussian { rho } => assert!(rho.abs() < 0.03, "{rho}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mle_beats_start() {
        let (u, v) = simulate(PairCopula::Gumbel { theta: 1.7 }, 2000, 9);
        let fit = fit_pair_mle(PairFamily::Gumbel, &u, &v).unwrap();
        let start = kendall_tau_invert(PairFamily::Gumbel, kendall_tau(&u, &v)).unwrap();
        assert!(fit.converged);
        assert!(fit.loglik >= pair_loglik(&start, &u, &v));
    }

    #[test]
    fn selection() {
        let (u, v) = simulate(PairCopula::Clayton { theta: 3.0 }, 5000, 4);
        let fit = select_pair_family(&u, &v, &PairFamily::ALL).unwrap();
        assert_eq!(fit.copula.family(), PairFamily::Clayton);

        let (u, v) = simulate(PairCopula::Gaussian { rho: 0.8 }, 5000, 5);
        let fit = select_pair_family(&u, &v, &PairFamily::ALL).unwrap();
        match fit.copula {
            PairCopula::Gaussian { .. } => {}
            PairCopula::StudentT { nu, .. } => assert!(nu >= 10.0, "nu {nu}"),
            other => panic!("{other:?}"),
        }

        let (u, v) = simulate(PairCopula::Independence, 5000, 6);
        let fit = select_pair_family(&u, &v, &PairFamily::ALL).unwrap();
        assert_eq!(fit.copula, PairCopula::Independence);

        assert!(select_pair_family(&u, &v, &[]).is_err());
    }

    #[test]
    fn fit_preconditions() {
        let u = vec![0.5; 10];
        assert!(fit_pair_mle(PairFamily::Gaussian, &u, &u).is_err());
        let mut u: Vec<f64> = (1..=40).map(|i| i as f64 / 41.0).collect();
        u[3] = 1.0;
        assert!(fit_pair_mle(PairFamily::Gaussian, &u, &u).is_err());
    }

    #[test]
    fn serde_shape() {
        let c = PairCopula::StudentT { rho: 0.25, nu: 4.0 };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"family":"t","rho":0.25,"nu":4.0}"#);
        let back: PairCopula = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}

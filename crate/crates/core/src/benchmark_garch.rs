//! AVT-GARCH (simplified) benchmark: AR(1) mean with exogenous regressors,
//! absolute-value threshold GARCH(1,1) volatility and Student-t innovations
//! scaled to unit variance.
//!
//! ```text
//! y_t = mu + phi y_{t-1} + beta_x' X_t + eps_t,   eps_t = sigma_t z_t
//! sigma_t = omega + alpha (|eps_{t-1}| - gamma eps_{t-1}) + beta sigma_{t-1}
//! ```

use rand::Rng;
use rand_distr::{Distribution, StudentT as TDist};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::optim::nelder_mead;
use crate::numerics::StudentT;
use crate::ts_model::ProbForecast;

const MIN_OBS: usize = 250;
const SIGMA_FLOOR: f64 = 1e-8;
const NU_MIN: f64 = 2.05;
const NU_MAX: f64 = 200.0;
/// Upper bound on alpha (1 + |gamma|) + beta inside the optimizer.
const PERSISTENCE_MAX: f64 = 0.999;
const VOL_STARTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArxAvtGarchModel {
    pub mu: f64,
    pub phi: f64,
    pub beta_x: Vec<f64>,
    pub omega: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub nu: f64,
}

impl ArxAvtGarchModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.omega > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.gamma.abs() < 1.0
            && self.nu > 2.0
            && self.alpha * (1.0 + self.gamma.abs()) + self.beta < 1.0
            && [self.mu, self.phi]
                .iter()
                .chain(&self.beta_x)
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            domain(format!("invalid AVT-GARCH parameters {self:?}"))
        }
    }

    pub fn n_regressors(&self) -> usize {
        self.beta_x.len()
    }

    /// Conditional mean given the previous value and current regressors.
    pub fn mean(&self, y_prev: f64, x: &[f64]) -> f64 {
        self.mu + self.phi * y_prev + self.beta_x.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// One step of the volatility recursion.
    pub fn next_sigma(&self, sigma_prev: f64, eps_prev: f64) -> f64 {
        self.omega + self.alpha * (eps_prev.abs() - self.gamma * eps_prev) + self.beta * sigma_prev
    }

    /// Scale turning a Student-t draw into a unit-variance innovation.
    pub fn innovation_scale(&self) -> f64 {
        ((self.nu - 2.0) / self.nu).sqrt()
    }
}

/// Filter state after an observation: conditional sd and residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchState {
    pub sigma: f64,
    pub eps: f64,
    pub y: f64,
}

/// Filtered residuals and volatilities for observations `1..T`.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub sigma: Vec<f64>,
    pub eps: Vec<f64>,
    pub loglik: f64,
}

fn check_inputs(y: &[f64], x: &[Vec<f64>], k: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: x.len(),
        });
    }
    if let Some(row) = x.iter().find(|r| r.len() != k) {
        return Err(Error::Dimension {
            expected: k,
            got: row.len(),
        });
    }
    if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in GARCH input".into()));
    }
    Ok(())
}

fn residuals(model: &ArxAvtGarchModel, y: &[f64], x: &[Vec<f64>]) -> Vec<f64> {
    (1..y.len())
        .map(|t| y[t] - model.mean(y[t - 1], &x[t]))
        .collect()
}

/// Runs the volatility recursion over the sample, starting from the mean
/// absolute residual, and accumulates the Student-t log-likelihood.
pub fn filter_arx_avtgarch(
    model: &ArxAvtGarchModel,
    y: &[f64],
    x: &[Vec<f64>],
) -> Result<FilterOutput> {
    check_inputs(y, x, model.n_regressors())?;
    if y.len() < 2 {
        return Err(Error::Data("filter needs at least two observations".into()));
    }
    let eps = residuals(model, y, x);
    let (sigma, loglik) = volatility_pass(model, &eps);
    Ok(FilterOutput { sigma, eps, loglik })
}

fn volatility_pass(model: &ArxAvtGarchModel, eps: &[f64]) -> (Vec<f64>, f64) {
    let t = StudentT::new_unchecked(model.nu);
    let scale = model.innovation_scale();
    let init = (eps.iter().map(|e| e.abs()).sum::<f64>() / eps.len() as f64).max(SIGMA_FLOOR);
    let mut sigma = Vec::with_capacity(eps.len());
    let mut s = init;
    let mut ll = 0.0;
    for (i, &e) in eps.iter().enumerate() {
        if i > 0 {
            s = model.next_sigma(s, eps[i - 1]).max(SIGMA_FLOOR);
        }
        sigma.push(s);
        ll += t.ln_pdf(e / (s * scale)) - (s * scale).ln();
    }
    (sigma, ll)
}

/// Parameters for the unconstrained optimizer and back.
struct Transform {
    k: usize,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Transform {
    const VOL: usize = 5;

    fn vol_to_model(&self, mean: &ArxAvtGarchModel, p: &[f64]) -> ArxAvtGarchModel {
        let gamma = 0.99 * p[1].tanh();
        let persistence = PERSISTENCE_MAX * logistic(p[2]);
        let share = logistic(p[3]);
        ArxAvtGarchModel {
            omega: p[0].exp(),
            gamma,
            alpha: persistence * share / (1.0 + gamma.abs()),
            beta: persistence * (1.0 - share),
            nu: NU_MIN + (NU_MAX - NU_MIN) * logistic(p[4]),
            ..mean.clone()
        }
    }

    fn vol_from_model(&self, m: &ArxAvtGarchModel) -> Vec<f64> {
        let a = m.alpha * (1.0 + m.gamma.abs());
        let persistence = ((a + m.beta) / PERSISTENCE_MAX).clamp(1e-6, 1.0 - 1e-6);
        let share = (a / (a + m.beta).max(1e-12)).clamp(1e-6, 1.0 - 1e-6);
        vec![
            m.omega.max(1e-12).ln(),
            (m.gamma / 0.99).clamp(-0.999, 0.999).atanh(),
            logit(persistence),
            logit(share),
            logit(((m.nu - NU_MIN) / (NU_MAX - NU_MIN)).clamp(1e-6, 1.0 - 1e-6)),
        ]
    }

    fn full_to_model(&self, p: &[f64]) -> ArxAvtGarchModel {
        let mean = ArxAvtGarchModel {
            mu: p[Self::VOL],
            phi: 0.999 * p[Self::VOL + 1].tanh(),
            beta_x: p[Self::VOL + 2..Self::VOL + 2 + self.k].to_vec(),
            omega: 1.0,
            alpha: 0.0,
            gamma: 0.0,
            beta: 0.0,
            nu: 10.0,
        };
        self.vol_to_model(&mean, &p[..Self::VOL])
    }

    fn full_from_model(&self, m: &ArxAvtGarchModel) -> Vec<f64> {
        let mut p = self.vol_from_model(m);
        p.push(m.mu);
        p.push((m.phi / 0.999).clamp(-0.999, 0.999).atanh());
        p.extend_from_slice(&m.beta_x);
        p
    }
}

/// Least-squares fit of the mean equation (intercept, lag, regressors).
fn ols_mean(y: &[f64], x: &[Vec<f64>], k: usize) -> Result<(f64, f64, Vec<f64>)> {
    let n = y.len() - 1;
    let p = 2 + k;
    let design = nalgebra::DMatrix::from_fn(n, p, |r, c| match c {
        0 => 1.0,
        1 => y[r],
        _ => x[r + 1][c - 2],
    });
    let target = nalgebra::DVector::from_iterator(n, y[1..].iter().copied());
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * target;
    let coef = xtx
        .cholesky()
        .ok_or_else(|| Error::Fit("mean-equation design matrix is singular".into()))?
        .solve(&xty);
    Ok((
        coef[0],
        coef[1].clamp(-0.99, 0.99),
        coef.iter().skip(2).copied().collect(),
    ))
}

/// Outcome of a benchmark fit.
#[derive(Debug, Clone)]
pub struct GarchFit {
    pub model: ArxAvtGarchModel,
    pub loglik: f64,
    pub start_loglik: f64,
    pub warnings: Vec<String>,
}

/// Fit controls; `warm_start` replaces the moment-based initial values.
#[derive(Debug, Clone, Default)]
pub struct GarchFitOptions {
    pub warm_start: Option<ArxAvtGarchModel>,
    pub starts: Option<usize>,
    pub max_iters: Option<u64>,
}

/// Quasi-maximum-likelihood fit with default options.
pub fn fit_arx_avtgarch(y: &[f64], x: &[Vec<f64>]) -> Result<GarchFit> {
    fit_arx_avtgarch_with(y, x, &GarchFitOptions::default())
}

/// Quasi-maximum-likelihood fit: Nelder–Mead over the volatility block from
/// several perturbed starts with the mean at its least-squares estimate, then
/// a joint Nelder–Mead polish of all parameters.
pub fn fit_arx_avtgarch_with(
    y: &[f64],
    x: &[Vec<f64>],
    opts: &GarchFitOptions,
) -> Result<GarchFit> {
    let k = x.first().map_or(0, Vec::len);
    check_inputs(y, x, k)?;
    if y.len() < MIN_OBS {
        return Err(Error::Fit(format!(
            "AVT-GARCH fit needs at least {MIN_OBS} observations, got {}",
            y.len()
        )));
    }
    let tr = Transform { k };
    let max_iters = opts.max_iters.unwrap_or(3000);

    let start = match &opts.warm_start {
        Some(m) if m.n_regressors() == k && m.validate().is_ok() => m.clone(),
        _ => {
            let (mu, phi, beta_x) = ols_mean(y, x, k)?;
            let base = ArxAvtGarchModel {
                mu,
                phi,
                beta_x,
                omega: 1.0,
                alpha: 0.0,
                gamma: 0.0,
                beta: 0.0,
                nu: 8.0,
            };
            let eps = residuals(&base, y, x);
            let mean_abs = eps.iter().map(|e| e.abs()).sum::<f64>() / eps.len() as f64;
            ArxAvtGarchModel {
                omega: 0.1 * mean_abs.max(SIGMA_FLOOR),
                alpha: 0.08,
                gamma: 0.0,
                beta: 0.85,
                ..base
            }
        }
    };
    let start_loglik = volatility_pass(&start, &residuals(&start, y, x)).1;

    let eps = residuals(&start, y, x);
    let vol_cost = |p: &[f64]| -volatility_pass(&tr.vol_to_model(&start, p), &eps).1;
    let base = tr.vol_from_model(&start);
    let perturbations: [[f64; 5]; VOL_STARTS] = [
        [0.0; 5],
        [0.5, 0.3, -1.0, 0.5, -0.5],
        [-0.5, -0.3, 1.0, -0.5, 0.5],
        [1.0, 0.0, -2.0, 1.0, 1.0],
        [-1.0, 0.5, 0.5, -1.0, -1.0],
    ];
    let starts = opts.starts.unwrap_or(VOL_STARTS).clamp(1, VOL_STARTS);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for pert in perturbations.iter().take(starts) {
        let s: Vec<f64> = base.iter().zip(pert).map(|(b, d)| b + d).collect();
        if let Some(m) = nelder_mead(vol_cost, &s, &[0.3; 5], max_iters) {
            if best.as_ref().map_or(true, |b| m.value < b.1) {
                best = Some((m.x, m.value));
            }
        }
    }
    let mut warnings = Vec::new();
    let vol_model = match best {
        Some((p, _)) => tr.vol_to_model(&start, &p),
        None => {
            warnings.push("volatility optimizer failed; keeping starting values".into());
            start.clone()
        }
    };

    let full_cost = |p: &[f64]| {
        let m = tr.full_to_model(p);
        -volatility_pass(&m, &residuals(&m, y, x)).1
    };
    let p0 = tr.full_from_model(&vol_model);
    let mut steps = vec![0.1; p0.len()];
    let mean_scale = eps.iter().map(|e| e.abs()).sum::<f64>() / eps.len() as f64;
    steps[Transform::VOL] = 0.1 * mean_scale.max(1e-6);
    for s in steps.iter_mut().skip(Transform::VOL + 2) {
        *s = 0.05;
    }
    let mut model = match nelder_mead(full_cost, &p0, &steps, max_iters) {
        Some(m) if m.value.is_finite() && m.value < 1e299 => tr.full_to_model(&m.x),
        _ => {
            warnings.push("joint optimizer failed; keeping volatility-stage estimate".into());
            vol_model.clone()
        }
    };
    let mut loglik = volatility_pass(&model, &residuals(&model, y, x)).1;
    let vol_loglik = volatility_pass(&vol_model, &residuals(&vol_model, y, x)).1;
    if vol_loglik > loglik {
        model = vol_model;
        loglik = vol_loglik;
    }
    if start_loglik > loglik {
        warnings.push("optimizer did not improve on the starting values".into());
        model = start;
        loglik = start_loglik;
    }
    if model.validate().is_err() {
        warnings.push("estimate left the stationarity region and was projected back".into());
        project_stationary(&mut model);
    }
    Ok(GarchFit {
        model,
        loglik,
        start_loglik,
        warnings,
    })
}

fn project_stationary(m: &mut ArxAvtGarchModel) {
    m.omega = m.omega.max(SIGMA_FLOOR);
    m.alpha = m.alpha.max(0.0);
    m.beta = m.beta.max(0.0);
    m.gamma = m.gamma.clamp(-0.99, 0.99);
    m.nu = m.nu.clamp(NU_MIN, NU_MAX);
    let p = m.alpha * (1.0 + m.gamma.abs()) + m.beta;
    if p >= PERSISTENCE_MAX {
        let f = PERSISTENCE_MAX / p;
        m.alpha *= f;
        m.beta *= f;
    }
}

/// Final filter state after running the model over `y`.
pub fn final_state(model: &ArxAvtGarchModel, y: &[f64], x: &[Vec<f64>]) -> Result<GarchState> {
    let out = filter_arx_avtgarch(model, y, x)?;
    Ok(GarchState {
        sigma: *out.sigma.last().unwrap(),
        eps: *out.eps.last().unwrap(),
        y: *y.last().unwrap(),
    })
}

/// Advances a filter state by one realized observation.
pub fn update_state(
    model: &ArxAvtGarchModel,
    state: GarchState,
    y_now: f64,
    x_now: &[f64],
) -> GarchState {
    let sigma = model.next_sigma(state.sigma, state.eps).max(SIGMA_FLOOR);
    let eps = y_now - model.mean(state.y, x_now);
    GarchState {
        sigma,
        eps,
        y: y_now,
    }
}

/// Draws `n` samples of the next observation. Returns the forecast and a
/// warning when the recursion had to be floored.
pub fn forecast_arx_avtgarch<R: Rng + ?Sized>(
    model: &ArxAvtGarchModel,
    y_prev: f64,
    x_now: &[f64],
    sigma_prev: f64,
    eps_prev: f64,
    n: usize,
    rng: &mut R,
) -> Result<(ProbForecast, Option<String>)> {
    if x_now.len() != model.n_regressors() {
        return Err(Error::Dimension {
            expected: model.n_regressors(),
            got: x_now.len(),
        });
    }
    let raw = model.next_sigma(sigma_prev, eps_prev);
    let (sigma, warning) = if raw > SIGMA_FLOOR && raw.is_finite() {
        (raw, None)
    } else {
        (
            SIGMA_FLOOR,
            Some(format!("sigma {raw} floored at {SIGMA_FLOOR}")),
        )
    };
    let loc = model.mean(y_prev, x_now);
    let scale = sigma * model.innovation_scale();
    let t = TDist::new(model.nu).map_err(|e| Error::Domain(e.to_string()))?;
    let draws: Vec<f64> = (0..n).map(|_| loc + scale * t.sample(rng)).collect();
    Ok((ProbForecast::new(None, vec![draws])?, warning))
}

/// Simulates `t_len` observations; `x` supplies regressor rows (or is empty when
/// the model has none).
pub fn simulate_arx_avtgarch<R: Rng + ?Sized>(
    model: &ArxAvtGarchModel,
    t_len: usize,
    x: &[Vec<f64>],
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    model.validate()?;
    let k = model.n_regressors();
    if k > 0 && x.len() != t_len {
        return Err(Error::Dimension {
            expected: t_len,
            got: x.len(),
        });
    }
    let zero = vec![0.0; k];
    let t = TDist::new(model.nu).map_err(|e| Error::Domain(e.to_string()))?;
    let scale = model.innovation_scale();
    let mut sigma = model.omega / (1.0 - model.beta).max(1e-3);
    let (mut y_prev, mut eps_prev) = (0.0, 0.0);
    let mut out = Vec::with_capacity(t_len);
    for i in 0..burn_in + t_len {
        if i > 0 {
            sigma = model.next_sigma(sigma, eps_prev).max(SIGMA_FLOOR);
        }
        let row = if i >= burn_in && k > 0 {
            &x[i - burn_in]
        } else {
            &zero
        };
        let eps = sigma * scale * t.sample(rng);
        let y = model.mean(y_prev, row) + eps;
        if i >= burn_in {
            out.push(y);
        }
        y_prev = y;
        eps_prev = eps;
    }
    Ok(out)
}

//! Synthetic datasets from a copula time series or an ARX-GARCH generator.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::data::{business_days, Dataset};
use super::rng::{substream, Purpose};
use crate::benchmark_garch::ArxAvtGarchModel;
use crate::copula_elliptical::{
    sample_elliptical, ConditionalElliptical, EllipticalCopula, EllipticalFamily,
};
use crate::error::{Error, Result};
use crate::numerics::{SpdMatrix, StudentT};
use crate::ts_model::fitted_vine_order;
use crate::vine::{sample_dvine, DVineConditional, DVineModel};

/// Parametric marginal of a synthetic series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MarginalSpec {
    Normal { mean: f64, sd: f64 },
    StudentT { nu: f64, loc: f64, scale: f64 },
}

impl MarginalSpec {
    fn quantile(&self, u: f64) -> Result<f64> {
        match *self {
            MarginalSpec::Normal { mean, sd } => {
                let n = Normal::new(mean, sd).map_err(|e| Error::Config(e.to_string()))?;
                Ok(n.inverse_cdf(u))
            }
            MarginalSpec::StudentT { nu, loc, scale } => {
                if !(scale > 0.0) {
                    return Err(Error::Config(format!(
                        "student-t scale must be positive, got {scale}"
                    )));
                }
                Ok(loc + scale * StudentT::new(nu)?.quantile(u))
            }
        }
    }
}

/// Copula of `(u_t, u_{t−1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CopulaSpec {
    Independence,
    /// Elliptical copula with correlation `[[current, lag], [lagᵀ, current]]`,
    /// where `lag[i][j]` is the correlation of series i at t with series j at t−1.
    Block {
        family: EllipticalFamily,
        current: Vec<Vec<f64>>,
        lag: Vec<Vec<f64>>,
    },
    /// D-vine on the lag-stacked columns, in the fitted path order.
    Vine {
        model: DVineModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    StCopula {
        copula: CopulaSpec,
        marginals: Vec<MarginalSpec>,
    },
    /// One model per series; regressors are the other series' previous values.
    ArxGarch { models: Vec<ArxAvtGarchModel> },
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 4).unwrap()
}

fn default_burn_in() -> usize {
    200
}

/// Full description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of level observations.
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
    pub series_names: Vec<String>,
    #[serde(default)]
    pub initial_levels: Option<Vec<f64>>,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub generator: Generator,
}

/// `[[current, lag], [lagᵀ, current]]`.
pub fn block_correlation(current: &[Vec<f64>], lag: &[Vec<f64>]) -> Result<SpdMatrix> {
    let d = current.len();
    if current.iter().chain(lag).any(|r| r.len() != d) || lag.len() != d {
        return Err(Error::Config(
            "block correlation rows must all have length d".into(),
        ));
    }
    let m = DMatrix::from_fn(2 * d, 2 * d, |i, j| match (i < d, j < d) {
        (true, true) => current[i][j],
        (false, false) => current[i - d][j - d],
        (true, false) => lag[i][j - d],
        (false, true) => lag[j][i - d],
    });
    if (0..d).any(|i| current[i][i] != 1.0) || m != m.transpose() {
        return Err(Error::Config(
            "current block must be a symmetric correlation matrix".into(),
        ));
    }
    SpdMatrix::new(m)
        .map_err(|e| Error::Config(format!("block correlation is not positive definite: {e}")))
}

enum Stepper {
    Independence,
    Elliptical(EllipticalCopula, ConditionalElliptical),
    Vine(DVineModel),
}

impl Stepper {
    fn new(spec: &CopulaSpec, d: usize) -> Result<Self> {
        Ok(match spec {
            CopulaSpec::Independence => Stepper::Independence,
            CopulaSpec::Block {
                family,
                current,
                lag,
            } => {
                if current.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: current.len(),
                    });
                }
                let c = EllipticalCopula::new(*family, block_correlation(current, lag)?)?;
                let cond = ConditionalElliptical::new(&c, d)?;
                Stepper::Elliptical(c, cond)
            }
            CopulaSpec::Vine { model } => {
                if model.order() != fitted_vine_order(d).as_slice() {
                    return Err(Error::Config(format!(
                        "vine order must be {:?}",
                        fitted_vine_order(d)
                    )));
                }
                Stepper::Vine(model.clone())
            }
        })
    }

    fn initial<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<Vec<f64>> {
        Ok(match self {
            Stepper::Independence => (0..d).map(|_| rng.random()).collect(),
            Stepper::Elliptical(c, _) => sample_elliptical(c, 1, rng).remove(0)[d..].to_vec(),
            Stepper::Vine(v) => sample_dvine(v, 1, rng)?.remove(0)[d..].to_vec(),
        })
    }

    fn next<R: Rng + ?Sized>(&self, u_prev: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(match self {
            Stepper::Independence => (0..u_prev.len()).map(|_| rng.random()).collect(),
            Stepper::Elliptical(_, cond) => cond.sample(u_prev, 1, rng)?.remove(0),
            Stepper::Vine(v) => {
                let prefix: Vec<f64> = u_prev.iter().rev().copied().collect();
                DVineConditional::new(v, &prefix)?.draw(rng)?
            }
        })
    }
}

fn simulate_copula<R: Rng + ?Sized>(
    copula: &CopulaSpec,
    marginals: &[MarginalSpec],
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let d = marginals.len();
    let stepper = Stepper::new(copula, d)?;
    let mut u = stepper.initial(d, rng)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..burn_in + n {
        u = stepper.next(&u, rng)?;
        if i >= burn_in {
            out.push(
                u.iter()
                    .zip(marginals)
                    .map(|(&v, m)| m.quantile(v))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
    }
    Ok(out)
}

fn simulate_garch<R: Rng + ?Sized>(
    models: &[ArxAvtGarchModel],
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let d = models.len();
    let mut dists = Vec::with_capacity(d);
    for m in models {
        m.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !m.beta_x.is_empty() && m.n_regressors() != d - 1 {
            return Err(Error::Config(format!(
                "model needs 0 or {} regressors, got {}",
                d - 1,
                m.n_regressors()
            )));
        }
        dists.push(StudentT::new(m.nu)?);
    }
    let mut sigma: Vec<f64> = models
        .iter()
        .map(|m| m.omega / (1.0 - m.beta).max(1e-3))
        .collect();
    let mut eps = vec![0.0; d];
    let mut prev = vec![0.0; d];
    let mut out = Vec::with_capacity(n);
    for i in 0..burn_in + n {
        let mut row = vec![0.0; d];
        for s in 0..d {
            let m = &models[s];
            if i > 0 {
                sigma[s] = m.next_sigma(sigma[s], eps[s]).max(1e-8);
            }
            let x: Vec<f64> = if m.beta_x.is_empty() {
                Vec::new()
            } else {
                (0..d).filter(|&j| j != s).map(|j| prev[j]).collect()
            };
            eps[s] = sigma[s]
                * m.innovation_scale()
                * dists[s].quantile(rng.random_range(1e-12..1.0 - 1e-12));
            row[s] = m.mean(prev[s], &x) + eps[s];
        }
        prev = row.clone();
        if i >= burn_in {
            out.push(row);
        }
    }
    Ok(out)
}

/// Simulates the generator's differenced series one step at a time and integrates
/// them into levels.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    let d = spec.series_names.len();
    if spec.t < 2 {
        return Err(Error::Config("synthetic dataset needs t ≥ 2".into()));
    }
    let n_series = match &spec.generator {
        Generator::StCopula { marginals, .. } => marginals.len(),
        Generator::ArxGarch { models } => models.len(),
    };
    if n_series != d || d == 0 {
        return Err(Error::Config(format!(
            "{d} series names for a {n_series}-series generator"
        )));
    }
    let initial = spec
        .initial_levels
        .clone()
        .unwrap_or_else(|| vec![100.0; d]);
    if initial.len() != d {
        return Err(Error::Config(
            "initial_levels length must match series_names".into(),
        ));
    }
    let mut rng = substream(spec.seed, 0, 0, Purpose::Synth);
    let diffs = match &spec.generator {
        Generator::StCopula { copula, marginals } => {
            simulate_copula(copula, marginals, spec.t - 1, spec.burn_in, &mut rng)?
        }
        Generator::ArxGarch { models } => {
            simulate_garch(models, spec.t - 1, spec.burn_in, &mut rng)?
        }
    };
    let mut levels = Vec::with_capacity(spec.t);
    levels.push(initial);
    for row in &diffs {
        let last = levels.last().unwrap();
        let next: Vec<f64> = last.iter().zip(row).map(|(a, b)| a + b).collect();
        levels.push(next);
    }
    Dataset::new(
        business_days(spec.start_date, spec.t),
        spec.series_names.clone(),
        levels,
    )
}

/// Four heavy-tailed series from a t copula (ν = 2.5). The first series has a
/// light-tailed marginal and strong dependence on its own and the second
/// series' previous values, which makes its conditional laws bimodal after
/// extreme moves.
pub fn desk_study_spec(seed: u64) -> SynthSpec {
    let current = vec![
        vec![1.0, 0.3, 0.3, 0.3],
        vec![0.3, 1.0, 0.3, 0.3],
        vec![0.3, 0.3, 1.0, 0.3],
        vec![0.3, 0.3, 0.3, 1.0],
    ];
    let lag = vec![
        vec![0.4, 0.45, 0.05, 0.05],
        vec![0.05, 0.15, 0.05, 0.05],
        vec![0.05, 0.05, 0.15, 0.05],
        vec![0.05, 0.05, 0.05, 0.15],
    ];
    let heavy = MarginalSpec::StudentT {
        nu: 4.0,
        loc: 0.0,
        scale: 1.0,
    };
    SynthSpec {
        t: 2861,
        seed,
        series_names: ["gas", "oil", "coal", "power"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        initial_levels: None,
        start_date: default_start(),
        burn_in: default_burn_in(),
        generator: Generator::StCopula {
            copula: CopulaSpec::Block {
                family: EllipticalFamily::StudentT { nu: 2.5 },
                current,
                lag,
            },
            marginals: vec![
                MarginalSpec::Normal { mean: 0.0, sd: 1.0 },
                heavy.clone(),
                heavy.clone(),
                heavy,
            ],
        },
    }
}

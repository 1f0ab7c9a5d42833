//! Copula-based Markov(1) forecasting models: Tem-t, S-Tem-Gaussian, S-Tem-t
//! and S-Tem D-vine.
//!
//! A model couples the current and the lagged observation of `d` series through
//! a copula of dimension `2d` on the lag-stacked pseudo-observations
//! `(u_{t,1..d}, u_{t-1,1..d})`. Series `i` uses one empirical marginal for both
//! of its columns.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula_elliptical::{
    fit_elliptical, ConditionalElliptical, EllipticalCopula, EllipticalKind,
};
use crate::copula_pair::PairFamily;
use crate::error::{domain, Error, Result};
use crate::kde::kde_argmax_sample;
use crate::marginals::{fit_empirical, EmpiricalMarginal};
use crate::vine::{fit_dvine, DVineConditional, DVineModel};

const MIN_OBS: usize = 100;
const MIN_MODE_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TemT,
    StemGaussian,
    StemT,
    StemDvine,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::TemT,
        Variant::StemGaussian,
        Variant::StemT,
        Variant::StemDvine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::TemT => "tem_t",
            Variant::StemGaussian => "stem_gaussian",
            Variant::StemT => "stem_t",
            Variant::StemDvine => "stem_dvine",
        }
    }

    /// Column label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::TemT => "Tem-t",
            Variant::StemGaussian => "S-Tem-Gaussian",
            Variant::StemT => "S-Tem-t",
            Variant::StemDvine => "S-Tem D-Vine",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant '{s}'")))
    }
}

/// Default D-vine path over the lag-stacked columns: unlagged series in
/// reverse order, then lagged series in order. With series (NGas, oil, coal,
/// CEF) this reads CEF, coal, oil, NGas, NGas lag, oil lag, coal lag, CEF lag.
pub fn default_vine_order(d: usize) -> Vec<usize> {
    (0..d).rev().chain(d..2 * d).collect()
}

/// The path actually fitted: the reverse of [`default_vine_order`], so that
/// the lagged block forms the prefix.
pub fn fitted_vine_order(d: usize) -> Vec<usize> {
    let mut order = default_vine_order(d);
    order.reverse();
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelCopula {
    Elliptical(EllipticalCopula),
    Vine(DVineModel),
}

impl ModelCopula {
    pub fn dim(&self) -> usize {
        match self {
            ModelCopula::Elliptical(c) => c.dim(),
            ModelCopula::Vine(v) => v.dim(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct SpatioTemporalModel {
    variant: Variant,
    series_names: Vec<String>,
    marginals: Vec<EmpiricalMarginal>,
    copula: ModelCopula,
    conditional: Option<ConditionalElliptical>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    variant: Variant,
    series_names: Vec<String>,
    marginals: Vec<EmpiricalMarginal>,
    copula: ModelCopula,
}

impl TryFrom<ModelDoc> for SpatioTemporalModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        SpatioTemporalModel::new(doc.variant, doc.series_names, doc.marginals, doc.copula)
    }
}

impl From<SpatioTemporalModel> for ModelDoc {
    fn from(m: SpatioTemporalModel) -> Self {
        ModelDoc {
            variant: m.variant,
            series_names: m.series_names,
            marginals: m.marginals,
            copula: m.copula,
        }
    }
}

impl PartialEq for SpatioTemporalModel {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
            && self.series_names == other.series_names
            && self.marginals == other.marginals
            && self.copula == other.copula
    }
}

impl SpatioTemporalModel {
    pub fn new(
        variant: Variant,
        series_names: Vec<String>,
        marginals: Vec<EmpiricalMarginal>,
        copula: ModelCopula,
    ) -> Result<Self> {
        let d = marginals.len();
        if d == 0 {
            return domain("model needs at least one series");
        }
        if series_names.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: series_names.len(),
            });
        }
        if variant == Variant::TemT && d != 1 {
            return domain(format!("tem_t models a single series, got {d}"));
        }
        if copula.dim() != 2 * d {
            return Err(Error::Dimension {
                expected: 2 * d,
                got: copula.dim(),
            });
        }
        let conditional = match &copula {
            ModelCopula::Elliptical(c) => Some(ConditionalElliptical::new(c, d)?),
            ModelCopula::Vine(v) => {
                let expected = fitted_vine_order(d);
                if v.order() != expected.as_slice() {
                    return domain(format!(
                        "vine order must be {expected:?} so the lagged block is a prefix"
                    ));
                }
                None
            }
        };
        Ok(Self {
            variant,
            series_names,
            marginals,
            copula,
            conditional,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn d(&self) -> usize {
        self.marginals.len()
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    pub fn marginals(&self) -> &[EmpiricalMarginal] {
        &self.marginals
    }

    pub fn copula(&self) -> &ModelCopula {
        &self.copula
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Lag-stacked pseudo-observation columns `(u_t, u_{t-1})`, each of length T−1.
pub fn lag_stacked_pseudo_obs(
    series: &[Vec<f64>],
    marginals: &[EmpiricalMarginal],
) -> Vec<Vec<f64>> {
    let pits: Vec<Vec<f64>> = series
        .iter()
        .zip(marginals)
        .map(|(s, m)| s.iter().map(|&x| m.pit_unchecked(x)).collect())
        .collect();
    let current = pits.iter().map(|p| p[1..].to_vec());
    let lagged = pits.iter().map(|p| p[..p.len() - 1].to_vec());
    current.chain(lagged).collect()
}

/// Fits a model to `series` (one vector per series, common length T).
pub fn fit_st_model(
    series: &[Vec<f64>],
    series_names: &[String],
    variant: Variant,
    candidates: &[PairFamily],
) -> Result<SpatioTemporalModel> {
    let d = series.len();
    if d == 0 {
        return Err(Error::Fit("no series supplied".into()));
    }
    let t = series[0].len();
    if series.iter().any(|s| s.len() != t) {
        return Err(Error::Fit("series have unequal lengths".into()));
    }
    if t < MIN_OBS {
        return Err(Error::Fit(format!(
            "model fit needs at least {MIN_OBS} observations, got {t}"
        )));
    }
    let marginals = series
        .iter()
        .map(|s| fit_empirical(s))
        .collect::<Result<Vec<_>>>()?;
    let columns = lag_stacked_pseudo_obs(series, &marginals);
    let copula = match variant {
        Variant::TemT | Variant::StemT => {
            ModelCopula::Elliptical(fit_elliptical(EllipticalKind::StudentT, &columns)?.copula)
        }
        Variant::StemGaussian => {
            ModelCopula::Elliptical(fit_elliptical(EllipticalKind::Gaussian, &columns)?.copula)
        }
        Variant::StemDvine => {
            ModelCopula::Vine(fit_dvine(&columns, &fitted_vine_order(d), candidates)?)
        }
    };
    SpatioTemporalModel::new(variant, series_names.to_vec(), marginals, copula)
}

/// Monte-Carlo forecast distribution for one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbForecast {
    pub origin: Option<NaiveDate>,
    /// `samples[series][draw]`, in data units.
    samples: Vec<Vec<f64>>,
}

impl ProbForecast {
    pub fn new(origin: Option<NaiveDate>, samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.is_empty() {
            return domain("forecast needs at least one series");
        }
        let n = samples[0].len();
        if n < 2 || samples.iter().any(|s| s.len() != n) {
            return domain("forecast needs at least two draws per series, equal across series");
        }
        if samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite forecast sample".into()));
        }
        Ok(Self { origin, samples })
    }

    pub fn d(&self) -> usize {
        self.samples.len()
    }

    pub fn n(&self) -> usize {
        self.samples[0].len()
    }

    pub fn series(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }
}

/// Draws `n` one-step-ahead samples given the previous observation `x_prev`.
pub fn forecast_distribution<R: Rng + ?Sized>(
    model: &SpatioTemporalModel,
    x_prev: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<ProbForecast> {
    let d = model.d();
    if x_prev.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: x_prev.len(),
        });
    }
    if x_prev.iter().any(|x| !x.is_finite()) {
        return domain("previous observation must be finite");
    }
    let u_prev: Vec<f64> = x_prev
        .iter()
        .zip(&model.marginals)
        .map(|(&x, m)| m.pit_unchecked(x))
        .collect();
    let mut samples = vec![Vec::with_capacity(n); d];
    match (&model.copula, &model.conditional) {
        (ModelCopula::Elliptical(_), Some(cond)) => {
            for row in cond.sample(&u_prev, n, rng)? {
                for (i, u) in row.into_iter().enumerate() {
                    samples[i].push(model.marginals[i].quantile_unchecked(u));
                }
            }
        }
        (ModelCopula::Vine(vine), _) => {
            // Fitted path starts with lagged series d-1, ..., 0.
            let prefix: Vec<f64> = u_prev.iter().rev().copied().collect();
            let cond = DVineConditional::new(vine, &prefix)?;
            for _ in 0..n {
                for (i, u) in cond.draw(rng)?.into_iter().enumerate() {
                    samples[i].push(model.marginals[i].quantile_unchecked(u));
                }
            }
        }
        (ModelCopula::Elliptical(_), None) => {
            return Err(Error::State(
                "elliptical model without conditional law".into(),
            ))
        }
    }
    ProbForecast::new(None, samples)
}

/// Per-series sample mean.
pub fn point_mean(f: &ProbForecast) -> Vec<f64> {
    f.samples.iter().map(|s| sample_mean(s)).collect()
}

/// Mean computed around the first value, exact for constant samples.
pub fn sample_mean(s: &[f64]) -> f64 {
    let x0 = s[0];
    x0 + s.iter().map(|x| x - x0).sum::<f64>() / s.len() as f64
}

/// Per-series sample point maximizing a Gaussian KDE with Silverman bandwidth.
pub fn point_mode(f: &ProbForecast) -> Result<Vec<f64>> {
    if f.n() < MIN_MODE_SAMPLES {
        return domain(format!(
            "mode forecast needs at least {MIN_MODE_SAMPLES} samples, got {}",
            f.n()
        ));
    }
    Ok(f.samples.iter().map(|s| kde_argmax_sample(s)).collect())
}

/// Linearly interpolated quantile of an ascending sample (type 7).
pub fn sorted_quantile(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-series empirical quantile at `level` ∈ (0,1).
pub fn point_quantile(f: &ProbForecast, level: f64) -> Result<Vec<f64>> {
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("quantile level must lie in (0,1), got {level}"));
    }
    Ok(f.samples
        .iter()
        .map(|s| {
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            sorted_quantile(&sorted, level)
        })
        .collect())
}

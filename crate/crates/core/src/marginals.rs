//! Nonparametric (empirical) marginal distributions.
//!
//! The probability integral transform uses midranks scaled by `1/(n+1)` and is
//! linearly interpolated between distinct order statistics; the quantile
//! transform is its piecewise-linear inverse. Queries outside the sample range
//! clamp to the extreme knots.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarginalDoc", into = "MarginalDoc")]
pub struct EmpiricalMarginal {
    sorted: Vec<f64>,
    /// Distinct sample values, ascending.
    knots: Vec<f64>,
    /// Midrank / (n+1) for each distinct value.
    levels: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MarginalDoc {
    sample: Vec<f64>,
}

impl TryFrom<MarginalDoc> for EmpiricalMarginal {
    type Error = Error;

    fn try_from(doc: MarginalDoc) -> Result<Self> {
        fit_empirical(&doc.sample)
    }
}

impl From<EmpiricalMarginal> for MarginalDoc {
    fn from(m: EmpiricalMarginal) -> Self {
        MarginalDoc { sample: m.sorted }
    }
}

/// Fits an empirical marginal to `sample` (at least two finite values).
pub fn fit_empirical(sample: &[f64]) -> Result<EmpiricalMarginal> {
    if sample.len() < 2 {
        return Err(Error::Fit(format!(
            "empirical marginal needs at least 2 points, got {}",
            sample.len()
        )));
    }
    if let Some(bad) = sample.iter().find(|x| !x.is_finite()) {
        return Err(Error::Fit(format!(
            "non-finite value {bad} in marginal sample"
        )));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scale = 1.0 / (sorted.len() as f64 + 1.0);
    let mut knots = Vec::new();
    let mut levels = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank
        let midrank = 0.5 * ((i + 1) + (j + 1)) as f64;
        knots.push(sorted[i]);
        levels.push(midrank * scale);
        i = j + 1;
    }
    Ok(EmpiricalMarginal {
        sorted,
        knots,
        levels,
    })
}

impl EmpiricalMarginal {
    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted_sample(&self) -> &[f64] {
        &self.sorted
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    fn lower_clamp(&self) -> f64 {
        1.0 / (self.n() as f64 + 1.0)
    }

    fn upper_clamp(&self) -> f64 {
        self.n() as f64 / (self.n() as f64 + 1.0)
    }

    /// Probability integral transform of `x`; NaN maps to NaN.
    pub fn pit_unchecked(&self, x: f64) -> f64 {
        let k = self.knots.partition_point(|&v| v < x);
        if k == self.knots.len() {
            return self.upper_clamp();
        }
        if self.knots[k] == x {
            return self.levels[k];
        }
        if k == 0 {
            return self.lower_clamp();
        }
        let (x0, x1) = (self.knots[k - 1], self.knots[k]);
        let (l0, l1) = (self.levels[k - 1], self.levels[k]);
        l0 + (l1 - l0) * (x - x0) / (x1 - x0)
    }

    pub fn pit(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return domain(format!("pit argument must be finite, got {x}"));
        }
        Ok(self.pit_unchecked(x))
    }

    /// Quantile transform for `u` in (0,1) (no validation).
    pub fn quantile_unchecked(&self, u: f64) -> f64 {
        let k = self.levels.partition_point(|&l| l < u);
        if k == 0 {
            return self.knots[0];
        }
        if k == self.levels.len() {
            return self.knots[k - 1];
        }
        if self.levels[k] == u {
            return self.knots[k];
        }
        let (l0, l1) = (self.levels[k - 1], self.levels[k]);
        let (x0, x1) = (self.knots[k - 1], self.knots[k]);
        x0 + (x1 - x0) * (u - l0) / (l1 - l0)
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("quantile level must lie in (0,1), got {u}"));
        }
        Ok(self.quantile_unchecked(u))
    }

    /// True when `x` falls outside the training sample range (the transform clamps).
    pub fn is_out_of_range(&self, x: f64) -> bool {
        x < self.min() || x > self.max()
    }
}

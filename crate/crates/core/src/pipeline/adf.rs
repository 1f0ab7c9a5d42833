//! Augmented Dickey-Fuller unit-root test with a constant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1% asymptotic critical value, constant included.
pub const CRITICAL_1PCT: f64 = -3.43;
const MIN_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags: usize,
    /// Unit root rejected at the 1% level.
    pub reject: bool,
}

/// Schwert lag rule `⌊12 (T/100)^{1/4}⌋`.
pub fn schwert_lags(t: usize) -> usize {
    (12.0 * (t as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Regresses `Δx_t` on a constant, `x_{t−1}` and `p` lagged differences and
/// returns the t-statistic of the `x_{t−1}` coefficient.
pub fn adf_test(series: &[f64]) -> Result<AdfResult> {
    if series.len() < MIN_LEN {
        return Err(Error::Domain(format!(
            "ADF test needs at least {MIN_LEN} observations, got {}",
            series.len()
        )));
    }
    let p = schwert_lags(series.len());
    let dx: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    // dx[i] = x[i+1] − x[i]; regression rows use dx[i] for i ≥ p.
    let rows = dx.len() - p;
    let cols = 2 + p;
    if rows <= cols {
        return Err(Error::Domain("series too short for the lag order".into()));
    }
    let x = DMatrix::from_fn(rows, cols, |r, c| {
        let i = r + p;
        match c {
            0 => 1.0,
            1 => series[i],
            _ => dx[i - (c - 1)],
        }
    });
    let y = DVector::from_fn(rows, |r, _| dx[r + p]);
    let xtx = x.transpose() * &x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("ADF regression is rank deficient".into()))?;
    let beta = chol.solve(&(x.transpose() * &y));
    let resid = &y - &x * &beta;
    let s2 = resid.norm_squared() / (rows - cols) as f64;
    let inv = chol.inverse();
    let se = (s2 * inv[(1, 1)]).sqrt();
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::Numeric("ADF regression is rank deficient".into()));
    }
    let statistic = beta[1] / se;
    Ok(AdfResult {
        statistic,
        lags: p,
        reject: statistic < CRITICAL_1PCT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn random_walk_is_not_rejected() {
        let mut level = 0.0;
        let walk: Vec<f64> = noise(1, 1000)
            .into_iter()
            .map(|e| {
                level += e;
                level
            })
            .collect();
        let r = adf_test(&walk).unwrap();
        assert!(!r.reject, "statistic {}", r.statistic);
        assert_eq!(r.lags, 21);
    }

    #[test]
    fn white_noise_is_rejected() {
        let r = adf_test(&noise(2, 1000)).unwrap();
        assert!(r.reject, "statistic {}", r.statistic);
    }

    #[test]
    fn short_and_degenerate_inputs() {
        assert!(adf_test(&noise(3, 10)).is_err());
        assert!(adf_test(&[1.0; 200]).is_err());
    }

    #[test]
    fn rejection_rate_under_the_null_is_small() {
        let rejections = (0..40u64)
            .filter(|&s| {
                let mut level = 0.0;
                let walk: Vec<f64> = noise(100 + s, 500)
                    .into_iter()
                    .map(|e| {
                        level += e;
                        level
                    })
                    .collect();
                adf_test(&walk).unwrap().reject
            })
            .count();
        assert!(rejections <= 3);
    }
}

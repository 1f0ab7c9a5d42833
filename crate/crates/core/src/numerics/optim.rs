//! Thin wrappers over `argmin` for the two derivative-free optimizers used by
//! the fitting code: Brent on an interval and Nelder–Mead on a simplex.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;

/// Penalty returned for non-finite objective values.
const BAD_COST: f64 = 1e300;

struct ScalarCost<F>(F);

impl<F: Fn(f64) -> f64> CostFunction for ScalarCost<F> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> Result<f64, ArgminError> {
        let v = (self.0)(*x);
        Ok(if v.is_finite() { v } else { BAD_COST })
    }
}

struct VecCost<F>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for VecCost<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, ArgminError> {
        let v = (self.0)(x);
        Ok(if v.is_finite() { v } else { BAD_COST })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Minimum1d {
    pub x: f64,
    pub value: f64,
}

/// Minimizes `f` over `[lo, hi]` with Brent's method.
pub fn brent_minimize<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Option<Minimum1d> {
    let solver = BrentOpt::new(lo, hi).set_tolerance(1e-10, tol);
    let res = Executor::new(ScalarCost(f), solver)
        .configure(|s| s.max_iters(200))
        .run()
        .ok()?;
    let state = res.state();
    let x = *state.get_best_param()?;
    Some(Minimum1d {
        x,
        value: state.get_best_cost(),
    })
}

#[derive(Debug, Clone)]
pub struct MinimumNd {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: u64,
}

/// Minimizes `f` with Nelder–Mead from an axis-aligned simplex around `start`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    steps: &[f64],
    max_iters: u64,
) -> Option<MinimumNd> {
    let mut simplex = vec![start.to_vec()];
    for (i, step) in steps.iter().enumerate() {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-10).ok()?;
    let res = Executor::new(VecCost(f), solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .ok()?;
    let state = res.state();
    Some(MinimumNd {
        x: state.get_best_param()?.clone(),
        value: state.get_best_cost(),
        iterations: state.get_iter(),
    })
}

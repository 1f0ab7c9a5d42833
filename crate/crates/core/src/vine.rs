//! D-vine copulas: sequential tree-by-tree estimation, density evaluation,
//! simulation by the inverse-h cascade, and simulation conditional on a fixed
//! prefix of the vine order.
//!
//! Positions along the vine path are numbered `0..m`; position `p` holds the
//! variable `order[p]`. Edge `(j, i)` of tree `j` (1-based) couples positions
//! `i` and `i + j` given the positions strictly between them. Its copula is
//! evaluated at `(a, b)` with `a = F(x_i | between)` and `b = F(x_{i+j} | between)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula_pair::{clamp_unit, select_pair_family, PairCopula, PairEval, PairFamily, CLAMP};
use crate::error::{domain, Error, Result};

const MIN_ROWS: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DVineDoc", into = "DVineDoc")]
pub struct DVineModel {
    order: Vec<usize>,
    /// `pairs[j - 1][i]` is the copula of edge `(j, i)`.
    pairs: Vec<Vec<PairCopula>>,
    loglik: f64,
    evals: Vec<Vec<PairEval>>,
}

impl PartialEq for DVineModel {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.pairs == other.pairs && self.loglik == other.loglik
    }
}

#[derive(Serialize, Deserialize)]
struct DVineDoc {
    order: Vec<usize>,
    pairs: Vec<Vec<PairCopula>>,
    loglik: f64,
}

impl TryFrom<DVineDoc> for DVineModel {
    type Error = Error;

    fn try_from(doc: DVineDoc) -> Result<Self> {
        DVineModel::new(doc.order, doc.pairs, doc.loglik)
    }
}

impl From<DVineModel> for DVineDoc {
    fn from(m: DVineModel) -> Self {
        DVineDoc {
            order: m.order,
            pairs: m.pairs,
            loglik: m.loglik,
        }
    }
}

fn check_permutation(order: &[usize]) -> Result<()> {
    let mut seen = vec![false; order.len()];
    for &o in order {
        if o >= order.len() || seen[o] {
            return domain(format!("vine order {order:?} is not a permutation"));
        }
        seen[o] = true;
    }
    Ok(())
}

impl DVineModel {
    pub fn new(order: Vec<usize>, pairs: Vec<Vec<PairCopula>>, loglik: f64) -> Result<Self> {
        let m = order.len();
        if m < 2 {
            return domain("a vine needs at least two variables");
        }
        check_permutation(&order)?;
        if pairs.len() != m - 1 {
            return domain(format!(
                "vine on {m} variables needs {} trees, got {}",
                m - 1,
                pairs.len()
            ));
        }
        for (j, tree) in pairs.iter().enumerate() {
            if tree.len() != m - 1 - j {
                return domain(format!(
                    "tree {} needs {} edges, got {}",
                    j + 1,
                    m - 1 - j,
                    tree.len()
                ));
            }
            for c in tree {
                c.validate()?;
            }
        }
        let evals = pairs
            .iter()
            .map(|t| t.iter().map(PairCopula::evaluator).collect())
            .collect();
        Ok(Self {
            order,
            pairs,
            loglik,
            evals,
        })
    }

    /// Vine with every edge set to the independence copula.
    pub fn independence(order: Vec<usize>) -> Result<Self> {
        let m = order.len();
        let pairs = (1..m)
            .map(|j| vec![PairCopula::Independence; m - j])
            .collect();
        Self::new(order, pairs, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn pairs(&self) -> &[Vec<PairCopula>] {
        &self.pairs
    }

    /// Copula of edge `(tree, i)`, `tree` 1-based.
    pub fn pair(&self, tree: usize, i: usize) -> &PairCopula {
        &self.pairs[tree - 1][i]
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    fn eval(&self, tree: usize, i: usize) -> &PairEval {
        &self.evals[tree - 1][i]
    }

    /// Log-density at `u` given in vine-path order.
    fn ln_density_path(&self, path: &[f64]) -> f64 {
        let m = self.dim();
        let mut a: Vec<f64> = path[..m - 1].to_vec();
        let mut b: Vec<f64> = path[1..].to_vec();
        let mut total = 0.0;
        for j in 1..m {
            let edges = m - j;
            for i in 0..edges {
                total += self.eval(j, i).ln_density(a[i], b[i]);
            }
            if j + 1 < m {
                for i in 0..edges - 1 {
                    let na = clamp_unit(self.eval(j, i).h(a[i], b[i]));
                    let nb = clamp_unit(self.eval(j, i + 1).h(b[i + 1], a[i + 1]));
                    a[i] = na;
                    b[i] = nb;
                }
                a.truncate(edges - 1);
                b.truncate(edges - 1);
            }
        }
        total
    }

    /// Log-density at `u`, indexed by original variable.
    pub fn ln_density(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: u.len(),
            });
        }
        if u.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return domain("vine density arguments must lie in (0,1)");
        }
        let path: Vec<f64> = self.order.iter().map(|&o| u[o]).collect();
        Ok(self.ln_density_path(&path))
    }
}

/// Copula density at `u` (indexed by original variable).
pub fn dvine_density(model: &DVineModel, u: &[f64]) -> Result<f64> {
    Ok(model.ln_density(u)?.exp())
}

/// Sequentially fits a D-vine along `order` to pseudo-observations given as
/// columns (`columns[var][row]`).
pub fn fit_dvine(
    columns: &[Vec<f64>],
    order: &[usize],
    candidates: &[PairFamily],
) -> Result<DVineModel> {
    let m = order.len();
    if columns.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: columns.len(),
        });
    }
    if m < 2 {
        return Err(Error::Fit("a vine needs at least two variables".into()));
    }
    check_permutation(order)?;
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Fit("columns have unequal lengths".into()));
    }
    if n < MIN_ROWS {
        return Err(Error::Fit(format!(
            "vine fit needs at least {MIN_ROWS} rows, got {n}"
        )));
    }
    let mut a: Vec<Vec<f64>> = order[..m - 1].iter().map(|&o| columns[o].clone()).collect();
    let mut b: Vec<Vec<f64>> = order[1..].iter().map(|&o| columns[o].clone()).collect();
    let mut pairs = Vec::with_capacity(m - 1);
    let mut loglik = 0.0;
    for j in 1..m {
        let edges = m - j;
        let mut tree = Vec::with_capacity(edges);
        for i in 0..edges {
            for (side, v) in [("first", &a[i]), ("second", &b[i])] {
                if is_degenerate(v) {
                    return Err(Error::Fit(format!(
                        "degenerate {side} argument on edge (tree {j}, position {i}) between variables {} and {}",
                        order[i],
                        order[i + j]
                    )));
                }
            }
            let fit = select_pair_family(&a[i], &b[i], candidates)
                .map_err(|e| Error::Fit(format!("edge (tree {j}, position {i}): {e}")))?;
            loglik += fit.loglik;
            tree.push(fit.copula);
        }
        if j + 1 < m {
            let evals: Vec<PairEval> = tree.iter().map(PairCopula::evaluator).collect();
            let next_a: Vec<Vec<f64>> = (0..edges - 1)
                .map(|i| {
                    a[i].iter()
                        .zip(&b[i])
                        .map(|(&x, &y)| clamp_unit(evals[i].h(x, y)))
                        .collect()
                })
                .collect();
            let next_b: Vec<Vec<f64>> = (0..edges - 1)
                .map(|i| {
                    b[i + 1]
                        .iter()
                        .zip(&a[i + 1])
                        .map(|(&x, &y)| clamp_unit(evals[i + 1].h(x, y)))
                        .collect()
                })
                .collect();
            a = next_a;
            b = next_b;
        }
        pairs.push(tree);
    }
    DVineModel::new(order.to_vec(), pairs, loglik)
}

fn is_degenerate(v: &[f64]) -> bool {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= 2.0 * CLAMP
}

/// Cascade state after the first `k` path positions are known: `a[i]` holds
/// F(x_i | x_{i+1..k}).
#[derive(Debug, Clone)]
struct CascadeState {
    a: Vec<f64>,
    path: Vec<f64>,
    /// Scratch for the forward-conditional chain of the current position.
    chain: Vec<f64>,
}

impl CascadeState {
    fn new(m: usize) -> Self {
        Self {
            a: Vec::with_capacity(m),
            path: Vec::with_capacity(m),
            chain: vec![0.0; m],
        }
    }

    /// Updates the a-states after `chain[0..=k]` has been filled for position `k`,
    /// where `chain[j] = F(x_k | x_{k-j..k})` ( `chain[0] = u_k`).
    fn absorb(&mut self, model: &DVineModel, k: usize) {
        let m = model.dim();
        if k + 1 < m {
            for j in 1..=k {
                let i = k - j;
                self.a[i] = clamp_unit(model.eval(j, i).h(self.a[i], self.chain[j - 1]));
            }
        }
        self.a.push(self.chain[0]);
        self.path.push(self.chain[0]);
    }

    /// Pins position `k` to the value `u` (deterministic propagation).
    fn push_fixed(&mut self, model: &DVineModel, u: f64) {
        let k = self.path.len();
        self.chain[0] = u;
        for j in 1..=k {
            self.chain[j] = clamp_unit(model.eval(j, k - j).h(self.chain[j - 1], self.a[k - j]));
        }
        self.absorb(model, k);
    }

    /// Draws position `k` from its conditional law given the earlier positions,
    /// using the uniform `w` as the target conditional probability.
    fn push_sampled(&mut self, model: &DVineModel, w: f64) -> Result<()> {
        let k = self.path.len();
        self.chain[k] = clamp_unit(w);
        for j in (1..=k).rev() {
            self.chain[j - 1] = clamp_unit(
                model
                    .eval(j, k - j)
                    .h_inverse(self.chain[j], self.a[k - j])?,
            );
        }
        self.absorb(model, k);
        Ok(())
    }
}

/// Draws `n` vectors from the vine, indexed by original variable.
pub fn sample_dvine<R: Rng + ?Sized>(
    model: &DVineModel,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let m = model.dim();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut state = CascadeState::new(m);
        for _ in 0..m {
            state.push_sampled(model, rng.random())?;
        }
        let mut row = vec![0.0; m];
        for (p, &o) in model.order.iter().enumerate() {
            row[o] = state.path[p];
        }
        out.push(row);
    }
    Ok(out)
}

/// Prefix-conditional sampler with the prefix propagation precomputed.
#[derive(Debug, Clone)]
pub struct DVineConditional<'a> {
    model: &'a DVineModel,
    prefix: CascadeState,
}

impl<'a> DVineConditional<'a> {
    /// `fixed_prefix[p]` is the value of the variable at vine position `p`.
    pub fn new(model: &'a DVineModel, fixed_prefix: &[f64]) -> Result<Self> {
        let m = model.dim();
        let k = fixed_prefix.len();
        if k == 0 || k >= m {
            return domain(format!("prefix length must be in 1..{m}, got {k}"));
        }
        if fixed_prefix.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return domain("prefix values must lie in (0,1)");
        }
        let mut prefix = CascadeState::new(m);
        for &u in fixed_prefix {
            prefix.push_fixed(model, u);
        }
        Ok(Self { model, prefix })
    }

    /// One draw of the free positions `k..m`, in vine-path order.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let k = self.prefix.path.len();
        let mut state = self.prefix.clone();
        for _ in k..self.model.dim() {
            state.push_sampled(self.model, rng.random())?;
        }
        Ok(state.path.split_off(k))
    }
}

/// Draws `n` vectors of the free positions `k..m` (vine-path order) given the
/// first `k` positions fixed to `fixed_prefix`.
pub fn conditional_sample_dvine<R: Rng + ?Sized>(
    model: &DVineModel,
    fixed_prefix: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let cond = DVineConditional::new(model, fixed_prefix)?;
    (0..n).map(|_| cond.draw(rng)).collect()
}

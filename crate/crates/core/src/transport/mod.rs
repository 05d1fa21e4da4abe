//! Monge-Kantorovich (Wasserstein) distances between discrete measures.
//!
//! Equal-size uniform measures go through an exact assignment solver; all
//! other weightings through a transportation network simplex. Either way the
//! optimal plan and a pair of dual potentials are returned alongside the
//! distance, so couplings can be reused and Kantorovich-Rubinstein
//! certificates built from them.

mod assignment;
mod dual;
mod gaussian;
mod network_simplex;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use dual::{kr_dual_certificate, DistanceToPoint, KantorovichPotential, LipschitzFn, MaxOfAffine, Projection};
pub use gaussian::{mk2_gaussian, GaussianMeasure};

/// Default atom cap for the exact solvers.
pub const DEFAULT_ATOM_CAP: usize = 4096;

/// A finitely supported probability measure `Σ_k w_k δ_{z_k}` on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl EmpiricalMeasure {
    /// Uniform weights `1/N` on the atoms stored row-major in `atoms`.
    pub fn uniform(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        check_atoms(dim, &atoms)?;
        let n = atoms.len() / dim;
        Ok(Self {
            dim,
            atoms,
            weights: vec![1.0 / n as f64; n],
            uniform: true,
        })
    }

    /// Explicit weights, which must be nonnegative and sum to one within `1e-12`.
    pub fn weighted(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_atoms(dim, &atoms)?;
        let n = atoms.len() / dim;
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        let uniform = weights.iter().all(|w| *w == weights[0]);
        Ok(Self {
            dim,
            atoms,
            weights,
            uniform,
        })
    }

    /// Weights proportional to `mass`, rescaled to sum to one.
    pub fn normalized(dim: usize, atoms: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        let total: f64 = mass.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(invalid("total mass must be positive"));
        }
        let weights = mass.into_iter().map(|w| w / total).collect();
        Self::weighted(dim, atoms, weights)
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(invalid("points of unequal dimension"));
        }
        Self::uniform(dim, points.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.dim..(k + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.dim)
    }

    pub fn atoms_flat(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when every atom carries the same weight.
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Applies `f` to every atom, keeping the weights.
    pub fn map_atoms(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let mut atoms = self.atoms.clone();
        for (src, dst) in self.atoms.chunks_exact(self.dim).zip(atoms.chunks_exact_mut(self.dim)) {
            f(src, dst);
        }
        check_atoms(self.dim, &atoms)?;
        Ok(Self {
            atoms,
            ..self.clone()
        })
    }

    /// `∫ φ dμ`.
    pub fn integrate(&self, mut phi: impl FnMut(&[f64]) -> f64) -> f64 {
        self.atoms().zip(&self.weights).map(|(z, w)| w * phi(z)).sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (z, w) in self.atoms().zip(&self.weights) {
            for (mi, zi) in m.iter_mut().zip(z) {
                *mi += w * zi;
            }
        }
        m
    }
}

fn check_atoms(dim: usize, atoms: &[f64]) -> Result<()> {
    if dim == 0 {
        return Err(invalid("measure dimension must be positive"));
    }
    if atoms.is_empty() || !atoms.len().is_multiple_of(dim) {
        return Err(invalid("atom list must be nonempty and a multiple of the dimension"));
    }
    if atoms.iter().any(|x| !x.is_finite()) {
        return Err(invalid("atom coordinates must be finite"));
    }
    Ok(())
}

/// Ground metric on `R^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroundMetric {
    /// `|z - w|` in the Euclidean norm of `R^n`.
    #[default]
    Euclidean,
    /// `|x - y| + |ξ - η|` for phase-space points split as `z = (x, ξ)` with
    /// `x ∈ R^split`.
    SplitSum { split: usize },
}

impl GroundMetric {
    pub fn distance(&self, z: &[f64], w: &[f64]) -> f64 {
        match *self {
            GroundMetric::Euclidean => euclid(z, w),
            GroundMetric::SplitSum { split } => euclid(&z[..split], &w[..split]) + euclid(&z[split..], &w[split..]),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match *self {
            GroundMetric::SplitSum { split } if split == 0 || split >= dim => {
                Err(invalid(format!("split {split} is not inside dimension {dim}")))
            }
            _ => Ok(()),
        }
    }
}

pub(crate) fn euclid(z: &[f64], w: &[f64]) -> f64 {
    z.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Exponent of the transport cost, `c = d^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exponent {
    One,
    Two,
}

impl Exponent {
    pub fn from_real(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(Exponent::One)
        } else if p == 2.0 {
            Ok(Exponent::Two)
        } else {
            Err(Error::Unsupported(format!("transport exponent p = {p}; only 1 and 2 are exact")))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Exponent::One => 1.0,
            Exponent::Two => 2.0,
        }
    }

    fn apply(self, d: f64) -> f64 {
        match self {
            Exponent::One => d,
            Exponent::Two => d * d,
        }
    }
}

/// Solver options.
#[derive(Debug, Clone, Copy)]
pub struct MkOptions {
    pub metric: GroundMetric,
    /// Largest atom count per side accepted by the exact solvers.
    pub atom_cap: usize,
}

impl Default for MkOptions {
    fn default() -> Self {
        Self {
            metric: GroundMetric::Euclidean,
            atom_cap: DEFAULT_ATOM_CAP,
        }
    }
}

impl MkOptions {
    pub fn with_metric(metric: GroundMetric) -> Self {
        Self {
            metric,
            ..Self::default()
        }
    }
}

/// A coupling of two discrete measures, stored as its positive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    /// Builds a plan from `(i, j, mass)` entries and checks it couples `mu` and `nu`.
    pub fn new(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let plan = Self {
            rows: mu.len(),
            cols: nu.len(),
            entries,
        };
        plan.check_marginals(mu, nu)?;
        Ok(plan)
    }

    /// `π_ij = μ_i ν_j`.
    pub fn product(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Self {
        let mut entries = Vec::with_capacity(mu.len() * nu.len());
        for (i, wi) in mu.weights().iter().enumerate() {
            for (j, wj) in nu.weights().iter().enumerate() {
                if wi * wj > 0.0 {
                    entries.push((i, j, wi * wj));
                }
            }
        }
        Self {
            rows: mu.len(),
            cols: nu.len(),
            entries,
        }
    }

    /// Plan moving atom `i` of a uniform measure onto atom `perm[i]` of another.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &j in perm {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Marginal("not a permutation".into()));
            }
        }
        Ok(Self {
            rows: n,
            cols: n,
            entries: perm.iter().enumerate().map(|(i, &j)| (i, j, 1.0 / n as f64)).collect(),
        })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Checks the coupling property: row sums equal the weights of `mu` and
    /// column sums those of `nu`, within `1e-9`.
    pub fn check_marginals(&self, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
        if self.rows != mu.len() || self.cols != nu.len() {
            return Err(Error::Marginal(format!(
                "plan is {}×{}, measures have {} and {} atoms",
                self.rows,
                self.cols,
                mu.len(),
                nu.len()
            )));
        }
        let mut r = vec![0.0; self.rows];
        let mut c = vec![0.0; self.cols];
        for &(i, j, m) in &self.entries {
            if i >= self.rows || j >= self.cols || !(m >= 0.0) {
                return Err(Error::Marginal(format!("bad entry ({i}, {j}, {m})")));
            }
            r[i] += m;
            c[j] += m;
        }
        let bad_row = r.iter().zip(mu.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let bad_col = c.iter().zip(nu.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if bad_row > 1e-9 || bad_col > 1e-9 {
            return Err(Error::Marginal(format!(
                "row marginal error {bad_row:.3e}, column marginal error {bad_col:.3e}"
            )));
        }
        Ok(())
    }

    /// `Σ π_ij c(z_i, w_j)` with `c = d^p`. Any coupling bounds the optimal
    /// cost from above.
    pub fn cost(&self, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, metric: GroundMetric, p: Exponent) -> Result<f64> {
        self.check_marginals(mu, nu)?;
        if mu.dim() != nu.dim() {
            return Err(Error::DimensionMismatch {
                expected: mu.dim(),
                found: nu.dim(),
            });
        }
        metric.check(mu.dim())?;
        Ok(self
            .entries
            .iter()
            .map(|&(i, j, m)| m * p.apply(metric.distance(mu.atom(i), nu.atom(j))))
            .sum())
    }

    /// Writes the plan as CSV with header `i,j,mass`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "i,j,mass")?;
        for &(i, j, m) in &self.entries {
            writeln!(out, "{i},{j},{m:.17e}")?;
        }
        Ok(())
    }
}

/// Cost of a given (possibly suboptimal) coupling, an upper bound for the
/// optimal cost with the same metric and exponent.
pub fn coupled_cost(plan: &TransportPlan, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, metric: GroundMetric, p: f64) -> Result<f64> {
    plan.cost(mu, nu, metric, Exponent::from_real(p)?)
}

/// Optimal transport between two discrete measures.
#[derive(Debug, Clone)]
pub struct MkResult {
    /// `dist_MK,p = (Σ π_ij d_ij^p)^{1/p}`.
    pub distance: f64,
    /// The optimal cost `Σ π_ij d_ij^p`, i.e. `distance^p`.
    pub cost: f64,
    pub plan: TransportPlan,
    /// Dual potentials `(φ, ψ)` with `φ_i + ψ_j ≤ d_ij^p`, attaining the cost.
    pub row_dual: Vec<f64>,
    pub col_dual: Vec<f64>,
    pub solver: Solver,
}

/// Which exact method produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    SingleAtom,
    /// Monotone matching of equal-size uniform measures on the line.
    Sorted,
    Assignment,
    NetworkSimplex,
}

/// Computes `dist_MK,p(μ, ν)` with `p ∈ {1, 2}` and an optimal plan.
pub fn mk_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64, opts: &MkOptions) -> Result<MkResult> {
    let p = Exponent::from_real(p)?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    opts.metric.check(mu.dim())?;
    let cost_of = |i: usize, j: usize| p.apply(opts.metric.distance(mu.atom(i), nu.atom(j)));

    if mu.len() == 1 || nu.len() == 1 {
        let plan = TransportPlan::product(mu, nu);
        let cost: f64 = plan.entries.iter().map(|&(i, j, m)| m * cost_of(i, j)).sum();
        let (row_dual, col_dual) = if mu.len() == 1 {
            (vec![0.0], (0..nu.len()).map(|j| cost_of(0, j)).collect())
        } else {
            ((0..mu.len()).map(|i| cost_of(i, 0)).collect(), vec![0.0])
        };
        return Ok(MkResult {
            distance: root(cost, p),
            cost,
            plan,
            row_dual,
            col_dual,
            solver: Solver::SingleAtom,
        });
    }

    if mu.dim() == 1 && mu.is_uniform() && nu.is_uniform() && mu.len() == nu.len() {
        return Ok(sorted_matching(mu, nu, p, &cost_of));
    }

    if mu.len() > opts.atom_cap {
        return Err(Error::CapExceeded {
            what: "first measure atoms",
            size: mu.len(),
            cap: opts.atom_cap,
        });
    }
    if nu.len() > opts.atom_cap {
        return Err(Error::CapExceeded {
            what: "second measure atoms",
            size: nu.len(),
            cap: opts.atom_cap,
        });
    }

    if mu.is_uniform() && nu.is_uniform() && mu.len() == nu.len() {
        let n = mu.len();
        let cost = build_cost(n, n, &cost_of);
        let sol = assignment::solve(n, &cost);
        let w = 1.0 / n as f64;
        let entries = sol.row_to_col.iter().enumerate().map(|(i, &j)| (i, j, w)).collect();
        let total = sol.total_cost * w;
        return Ok(MkResult {
            distance: root(total, p),
            cost: total,
            plan: TransportPlan {
                rows: n,
                cols: n,
                entries,
            },
            row_dual: sol.row_dual,
            col_dual: sol.col_dual,
            solver: Solver::Assignment,
        });
    }

    // network simplex on the atoms carrying mass
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights()[j] > 0.0).collect();
    let a: Vec<f64> = rows.iter().map(|&i| mu.weights()[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
    let cost = build_cost(rows.len(), cols.len(), &|r: usize, c: usize| cost_of(rows[r], cols[c]));
    let sol = network_simplex::solve(&a, &b, &cost);
    let entries = sol.flows.iter().map(|&(r, c, f)| (rows[r], cols[c], f)).collect();

    // zero-mass atoms get the tightest feasible potential
    let mut row_dual = vec![0.0; mu.len()];
    let mut col_dual = vec![0.0; nu.len()];
    let mut has_col = vec![false; nu.len()];
    for (c, &j) in cols.iter().enumerate() {
        col_dual[j] = sol.col_dual[c];
        has_col[j] = true;
    }
    let mut has_row = vec![false; mu.len()];
    for (r, &i) in rows.iter().enumerate() {
        row_dual[i] = sol.row_dual[r];
        has_row[i] = true;
    }
    for i in 0..mu.len() {
        if !has_row[i] {
            row_dual[i] = cols.iter().map(|&j| cost_of(i, j) - col_dual[j]).fold(f64::INFINITY, f64::min);
        }
    }
    for j in 0..nu.len() {
        if !has_col[j] {
            col_dual[j] = (0..mu.len()).map(|i| cost_of(i, j) - row_dual[i]).fold(f64::INFINITY, f64::min);
        }
    }

    Ok(MkResult {
        distance: root(sol.total_cost, p),
        cost: sol.total_cost,
        plan: TransportPlan {
            rows: mu.len(),
            cols: nu.len(),
            entries,
        },
        row_dual,
        col_dual,
        solver: Solver::NetworkSimplex,
    })
}

/// On the line, monotone rearrangement is optimal for any convex cost of the
/// difference. Duals follow the sorted chain, which is feasible because such
/// costs have the Monge property.
fn sorted_matching(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: Exponent, cost_of: &dyn Fn(usize, usize) -> f64) -> MkResult {
    let n = mu.len();
    let order = |m: &EmpiricalMeasure| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| m.atom(a)[0].total_cmp(&m.atom(b)[0]).then(a.cmp(&b)));
        idx
    };
    let xs = order(mu);
    let ys = order(nu);
    let w = 1.0 / n as f64;
    let mut row_dual = vec![0.0; n];
    let mut col_dual = vec![0.0; n];
    let mut u = cost_of(xs[0], ys[0]);
    let mut total = 0.0;
    let mut entries = Vec::with_capacity(n);
    for k in 0..n {
        let (i, j) = (xs[k], ys[k]);
        if k > 0 {
            u += cost_of(i, j) - cost_of(xs[k - 1], j);
        }
        let c = cost_of(i, j);
        row_dual[i] = u;
        col_dual[j] = c - u;
        total += c;
        entries.push((i, j, w));
    }
    entries.sort_unstable_by_key(|e| e.0);
    let cost = total * w;
    MkResult {
        distance: root(cost, p),
        cost,
        plan: TransportPlan { rows: n, cols: n, entries },
        row_dual,
        col_dual,
        solver: Solver::Sorted,
    }
}

fn build_cost(m: usize, n: usize, cost_of: &dyn Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut cost = vec![0.0; m * n];
    for (i, row) in cost.chunks_exact_mut(n).enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cost_of(i, j);
        }
    }
    cost
}

fn root(cost: f64, p: Exponent) -> f64 {
    match p {
        Exponent::One => cost,
        Exponent::Two => cost.max(0.0).sqrt(),
    }
}

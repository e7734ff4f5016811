//! Balanced transport: Sinkhorn-Knopp matrix scaling with entropic
//! regularization, plus an exact small-instance solver used as a
//! verification oracle.
//!
//! The Sinkhorn kernel is `K_ij = exp(-c_ij / lambda)`. One iteration
//! updates the consumer-side vector from the demands and then the
//! supplier-side vector from the supplies:
//!
//! ```text
//! u_j <- y_j / sum_i K_ij v_i
//! v_i <- x_i / sum_j K_ij u_j
//! ```
//!
//! After `T` iterations the plan is recovered by scaling the rows of `K`
//! with `v` and the columns with `u`, so row sums target the supplies and
//! column sums the demands.

use crate::error::{Error, Result};

/// Scale limit for [`exact_solve`].
pub const EXACT_SOLVE_LIMIT: usize = 10_000;

/// Relative tolerance of the supply/demand balance invariant.
pub const BALANCE_TOL: f64 = 1e-9;

/// A balanced transport instance: nonnegative costs, supplies and demands
/// with equal totals.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub m: usize,
    pub n: usize,
    cost: Vec<f64>,
    supply: Vec<f64>,
    demand: Vec<f64>,
}

impl TransportProblem {
    pub fn new(cost: Vec<f64>, supply: Vec<f64>, demand: Vec<f64>) -> Result<Self> {
        let m = supply.len();
        let n = demand.len();
        if m == 0 || n == 0 {
            return Err(Error::InvalidProblem(
                "need at least one supplier and one consumer".into(),
            ));
        }
        if cost.len() != m * n {
            return Err(Error::InvalidProblem(format!(
                "cost matrix has {} entries, expected {}",
                cost.len(),
                m * n
            )));
        }
        if let Some(i) = cost.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidProblem(format!(
                "cost[{i}] = {} must be finite and >= 0",
                cost[i]
            )));
        }
        for (name, v) in [("supply", &supply), ("demand", &demand)] {
            if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidProblem(format!(
                    "{name}[{i}] = {} must be finite and >= 0",
                    v[i]
                )));
            }
        }
        let sx: f64 = supply.iter().sum();
        let sy: f64 = demand.iter().sum();
        if (sx - sy).abs() > BALANCE_TOL * sx.abs().max(sy.abs()).max(1.0) {
            return Err(Error::InvalidProblem(format!(
                "unbalanced: total supply {sx} vs total demand {sy}"
            )));
        }
        Ok(Self {
            m,
            n,
            cost,
            supply,
            demand,
        })
    }

    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn total_mass(&self) -> f64 {
        self.supply.iter().sum()
    }
}

/// Sinkhorn iteration parameters.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornConfig {
    /// Entropic regularization coefficient, > 0.
    pub lambda: f64,
    /// Number of alternating update rounds.
    pub iterations: usize,
    /// Run the updates in log space (log-sum-exp); needed for small lambda.
    pub log_domain: bool,
    /// Divide costs by their maximum before exponentiation.
    pub normalize_cost: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            iterations: 80,
            log_domain: false,
            normalize_cost: true,
        }
    }
}

impl SinkhornConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument {
                name: "lambda",
                reason: format!("must be finite and > 0, got {}", self.lambda),
            });
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument {
                name: "iterations",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// A nonnegative coupling with its worst marginal deviation.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub m: usize,
    pub n: usize,
    gamma: Vec<f64>,
    pub converged_marginal_error: f64,
}

impl TransportPlan {
    pub fn gamma(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.gamma
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for i in 0..self.m {
            for (j, g) in self.row(i).iter().enumerate() {
                sums[j] += g;
            }
        }
        sums
    }
}

fn marginal_error(problem: &TransportProblem, gamma: &[f64]) -> f64 {
    let (m, n) = (problem.m, problem.n);
    let mut worst = 0.0f64;
    for i in 0..m {
        let row_sum: f64 = gamma[i * n..(i + 1) * n].iter().sum();
        worst = worst.max((row_sum - problem.supply[i]).abs());
    }
    let mut col = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            col[j] += gamma[i * n + j];
        }
    }
    for j in 0..n {
        worst = worst.max((col[j] - problem.demand[j]).abs());
    }
    worst
}

fn log_sum_exp(len: usize, mut term: impl FnMut(usize) -> f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for i in 0..len {
        max = max.max(term(i));
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for i in 0..len {
        sum += (term(i) - max).exp();
    }
    max + sum.ln()
}

/// Runs `config.iterations` Sinkhorn rounds and recovers the plan.
///
/// Suppliers with zero supply keep an all-zero row so row indices stay
/// aligned with the annotation order.
pub fn sinkhorn_solve(problem: &TransportProblem, config: &SinkhornConfig) -> Result<TransportPlan> {
    config.validate()?;
    let (m, n) = (problem.m, problem.n);
    let max_cost = problem.cost.iter().cloned().fold(0.0f64, f64::max);
    let scale = if config.normalize_cost && max_cost > 0.0 {
        max_cost
    } else {
        1.0
    };

    let gamma = if config.log_domain {
        log_domain_iterations(problem, config, scale)
    } else {
        plain_iterations(problem, config, scale)?
    };

    let err = marginal_error(problem, &gamma);
    Ok(TransportPlan {
        m,
        n,
        gamma,
        converged_marginal_error: err,
    })
}

fn plain_iterations(
    problem: &TransportProblem,
    config: &SinkhornConfig,
    scale: f64,
) -> Result<Vec<f64>> {
    let (m, n) = (problem.m, problem.n);
    let kernel: Vec<f64> = problem
        .cost
        .iter()
        .map(|&c| (-(c / scale) / config.lambda).exp())
        .collect();
    let mut u = vec![1.0f64; n];
    let mut v = vec![1.0f64; m];
    let mut kv = vec![0.0f64; n];
    for t in 0..config.iterations {
        // u over consumers from the demands
        kv.iter_mut().for_each(|e| *e = 0.0);
        for i in 0..m {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            let row = &kernel[i * n..(i + 1) * n];
            for j in 0..n {
                kv[j] += row[j] * vi;
            }
        }
        for j in 0..n {
            u[j] = if problem.demand[j] == 0.0 {
                0.0
            } else {
                problem.demand[j] / kv[j]
            };
            if !u[j].is_finite() {
                return Err(Error::SinkhornNumeric { iteration: t });
            }
        }
        // v over suppliers from the supplies
        for i in 0..m {
            if problem.supply[i] == 0.0 {
                v[i] = 0.0;
                continue;
            }
            let row = &kernel[i * n..(i + 1) * n];
            let mut ku = 0.0;
            for j in 0..n {
                ku += row[j] * u[j];
            }
            v[i] = problem.supply[i] / ku;
            if !v[i].is_finite() {
                return Err(Error::SinkhornNumeric { iteration: t });
            }
        }
    }
    let mut gamma = vec![0.0f64; m * n];
    for i in 0..m {
        let vi = v[i];
        for j in 0..n {
            gamma[i * n + j] = vi * kernel[i * n + j] * u[j];
        }
    }
    Ok(gamma)
}

fn log_domain_iterations(
    problem: &TransportProblem,
    config: &SinkhornConfig,
    scale: f64,
) -> Vec<f64> {
    let (m, n) = (problem.m, problem.n);
    let a: Vec<f64> = problem
        .cost
        .iter()
        .map(|&c| -(c / scale) / config.lambda)
        .collect();
    let log_supply: Vec<f64> = problem.supply.iter().map(|&x| x.ln()).collect();
    let log_demand: Vec<f64> = problem.demand.iter().map(|&y| y.ln()).collect();
    let mut log_u = vec![0.0f64; n];
    let mut log_v = vec![0.0f64; m];
    for _ in 0..config.iterations {
        for j in 0..n {
            log_u[j] = if problem.demand[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                log_demand[j] - log_sum_exp(m, |i| a[i * n + j] + log_v[i])
            };
        }
        for i in 0..m {
            log_v[i] = if problem.supply[i] == 0.0 {
                f64::NEG_INFINITY
            } else {
                log_supply[i] - log_sum_exp(n, |j| a[i * n + j] + log_u[j])
            };
        }
    }
    let mut gamma = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let lg = log_v[i] + a[i * n + j] + log_u[j];
            gamma[i * n + j] = if lg == f64::NEG_INFINITY { 0.0 } else { lg.exp() };
        }
    }
    gamma
}

/// Total transported cost `sum_ij gamma_ij * c_ij`.
pub fn plan_cost(problem: &TransportProblem, plan: &TransportPlan) -> Result<f64> {
    if plan.m != problem.m || plan.n != problem.n {
        return Err(Error::ShapeMismatch {
            context: "plan vs problem",
            expected: format!("{}x{}", problem.m, problem.n),
            got: format!("{}x{}", plan.m, plan.n),
        });
    }
    Ok(problem
        .cost
        .iter()
        .zip(plan.values())
        .map(|(c, g)| c * g)
        .sum())
}

/// Exact minimizer of the transport objective over the transportation
/// polytope, by successive shortest augmenting paths with node potentials.
/// Restricted to `m * n <=` [`EXACT_SOLVE_LIMIT`].
pub fn exact_solve(problem: &TransportProblem) -> Result<TransportPlan> {
    let (m, n) = (problem.m, problem.n);
    if m * n > EXACT_SOLVE_LIMIT {
        return Err(Error::OracleScale {
            size: m * n,
            limit: EXACT_SOLVE_LIMIT,
        });
    }
    let total = problem.total_mass();
    let mass_eps = 1e-12 * total.max(1.0);

    let mut rs = problem.supply.clone();
    let mut rd = problem.demand.clone();
    let mut flow = vec![0.0f64; m * n];
    let mut pot_s = vec![0.0f64; m];
    let mut pot_c = vec![0.0f64; n];
    let mut remaining: f64 = rd.iter().sum();

    let mut guard = 0usize;
    let guard_limit = 8 * (m + n) * (m + n) + 64;

    while remaining > mass_eps {
        guard += 1;
        if guard > guard_limit {
            return Err(Error::Internal(format!(
                "exact solver exceeded {guard_limit} augmentations"
            )));
        }
        let (dist_s, dist_c, parent_c, parent_s) =
            shortest_paths(problem, &rs, &flow, &pot_s, &pot_c, mass_eps);

        // nearest consumer that still needs goods
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if rd[j] > mass_eps
                && dist_c[j].is_finite()
                && best.is_none_or(|(d, _)| dist_c[j] < d)
            {
                best = Some((dist_c[j], j));
            }
        }
        let (d_star, target) = best.ok_or_else(|| {
            Error::Internal("no augmenting path in a balanced problem".into())
        })?;

        // potentials absorb the new distances
        for i in 0..m {
            pot_s[i] += dist_s[i].min(d_star);
        }
        for j in 0..n {
            pot_c[j] += dist_c[j].min(d_star);
        }

        // trace the path back to a supplier with remaining goods
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        let mut j = target;
        let root = loop {
            let i = parent_c[j].expect("reached consumer has a parent");
            forward.push((i, j));
            match parent_s[i] {
                None => break i,
                Some(prev_j) => {
                    backward.push((i, prev_j));
                    j = prev_j;
                }
            }
        };

        let mut delta = rd[target].min(rs[root]);
        for &(i, j) in &backward {
            delta = delta.min(flow[i * n + j]);
        }
        debug_assert!(delta > 0.0);
        for &(i, j) in &forward {
            flow[i * n + j] += delta;
        }
        for &(i, j) in &backward {
            flow[i * n + j] -= delta;
            if flow[i * n + j] < mass_eps {
                flow[i * n + j] = 0.0;
            }
        }
        rs[root] -= delta;
        rd[target] -= delta;
        remaining -= delta;
    }

    let err = marginal_error(problem, &flow);
    Ok(TransportPlan {
        m,
        n,
        gamma: flow,
        converged_marginal_error: err,
    })
}

type PathState = (Vec<f64>, Vec<f64>, Vec<Option<usize>>, Vec<Option<usize>>);

/// Dijkstra over the residual bipartite graph under reduced costs.
fn shortest_paths(
    problem: &TransportProblem,
    rs: &[f64],
    flow: &[f64],
    pot_s: &[f64],
    pot_c: &[f64],
    mass_eps: f64,
) -> PathState {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    let (m, n) = (problem.m, problem.n);
    // nodes: 0..m suppliers, m..m+n consumers
    let mut dist_s = vec![f64::INFINITY; m];
    let mut dist_c = vec![f64::INFINITY; n];
    let mut parent_c: Vec<Option<usize>> = vec![None; n];
    let mut parent_s: Vec<Option<usize>> = vec![None; m];
    let mut settled = vec![false; m + n];

    #[derive(PartialEq)]
    struct Entry {
        dist: f64,
        node: usize,
    }
    impl Eq for Entry {}
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            other
                .dist
                .partial_cmp(&self.dist)
                .unwrap()
                .then_with(|| other.node.cmp(&self.node))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }

    let mut heap = BinaryHeap::new();
    for i in 0..m {
        if rs[i] > mass_eps {
            dist_s[i] = 0.0;
            heap.push(Entry { dist: 0.0, node: i });
        }
    }
    while let Some(Entry { dist, node }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if node < m {
            let i = node;
            for j in 0..n {
                let reduced = (problem.cost(i, j) + pot_s[i] - pot_c[j]).max(0.0);
                let cand = dist + reduced;
                if cand < dist_c[j] {
                    dist_c[j] = cand;
                    parent_c[j] = Some(i);
                    heap.push(Entry {
                        dist: cand,
                        node: m + j,
                    });
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if flow[i * n + j] <= mass_eps {
                    continue;
                }
                let reduced = (-problem.cost(i, j) + pot_c[j] - pot_s[i]).max(0.0);
                let cand = dist + reduced;
                if cand < dist_s[i] {
                    dist_s[i] = cand;
                    parent_s[i] = Some(j);
                    heap.push(Entry { dist: cand, node: i });
                }
            }
        }
    }
    (dist_s, dist_c, parent_c, parent_s)
}

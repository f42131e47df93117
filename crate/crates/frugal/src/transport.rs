//! Balanced transportation problems: an exact transportation-simplex solver
//! and an entropic-regularized (Sinkhorn) approximation.

use crate::error::{Error, Result};

const BALANCE_TOL: f64 = 1e-9;
const REDUCED_COST_TOL: f64 = 1e-10;

/// A balanced transportation problem: non-negative cost matrix plus supply
/// and demand vectors whose totals agree within `1e-9`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    cost: Vec<f64>,
    supply: Vec<f64>,
    demand: Vec<f64>,
}

impl TransportProblem {
    pub fn new(cost: Vec<f64>, supply: Vec<f64>, demand: Vec<f64>) -> Result<Self> {
        let (m, n) = (supply.len(), demand.len());
        if m == 0 || n == 0 {
            return Err(Error::EmptyInput("transport problem with no points".into()));
        }
        if cost.len() != m * n {
            return Err(Error::Shape(format!(
                "cost matrix has {} entries, expected {m}x{n}",
                cost.len()
            )));
        }
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Data("costs must be finite and non-negative".into()));
        }
        if supply.iter().chain(demand.iter()).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Data("weights must be finite and non-negative".into()));
        }
        let (s, d) = (supply.iter().sum::<f64>(), demand.iter().sum::<f64>());
        if (s - d).abs() > BALANCE_TOL * s.max(d).max(1.0) {
            return Err(Error::Balance(format!("supply {s} vs demand {d}")));
        }
        if s <= 0.0 {
            return Err(Error::Data("total mass must be positive".into()));
        }
        Ok(Self {
            cost,
            supply,
            demand,
        })
    }

    pub fn rows(&self) -> usize {
        self.supply.len()
    }

    pub fn cols(&self) -> usize {
        self.demand.len()
    }

    pub fn cost_at(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.demand.len() + j]
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }
}

/// A feasible flow and its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub flow: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub objective: f64,
}

impl TransportPlan {
    pub fn flow_at(&self, i: usize, j: usize) -> f64 {
        self.flow[i * self.cols + j]
    }

    /// Largest absolute deviation of the plan's marginals from the problem's.
    pub fn marginal_residual(&self, p: &TransportProblem) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            let sum: f64 = self.flow[i * self.cols..(i + 1) * self.cols].iter().sum();
            worst = worst.max((sum - p.supply[i]).abs());
        }
        for j in 0..self.cols {
            let sum: f64 = (0..self.rows).map(|i| self.flow_at(i, j)).sum();
            worst = worst.max((sum - p.demand[j]).abs());
        }
        worst
    }
}

fn objective_of(cost: &[f64], flow: &[f64]) -> f64 {
    cost.iter().zip(flow).map(|(c, f)| c * f).sum()
}

// ---------------------------------------------------------------------------
// Exact solver: transportation simplex.
// ---------------------------------------------------------------------------

struct SimplexState {
    m: usize,
    n: usize,
    flow: Vec<f64>,
    in_basis: Vec<bool>,
    /// Basic cells; kept sorted is not required, membership lives in
    /// `in_basis`, adjacency is rebuilt from this list each pivot.
    basis: Vec<(usize, usize)>,
}

impl SimplexState {
    fn northwest_corner(supply: &[f64], demand: &[f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut flow = vec![0.0; m * n];
        let mut in_basis = vec![false; m * n];
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let q = s[i].min(d[j]);
            flow[i * n + j] = q;
            in_basis[i * n + j] = true;
            basis.push((i, j));
            s[i] -= q;
            d[j] -= q;
            if i + 1 == m && j + 1 == n {
                break;
            }
            // Advance along the exhausted side; ties prefer the row so the
            // degenerate zero cell lands in the next row.
            if s[i] <= 0.0 && i + 1 < m {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(basis.len(), m + n - 1);
        Self {
            m,
            n,
            flow,
            in_basis,
            basis,
        }
    }

    /// Solve `u_i + v_j = c_ij` over the basis tree, rooted at row 0.
    fn potentials(&self, cost: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let mut row_adj: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut col_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in &self.basis {
            row_adj[i].push(j);
            col_adj[j].push(i);
        }
        let mut u = vec![f64::NAN; m];
        let mut v = vec![f64::NAN; n];
        u[0] = 0.0;
        // Stack of (is_row, index).
        let mut stack = vec![(true, 0usize)];
        while let Some((is_row, idx)) = stack.pop() {
            if is_row {
                for &j in &row_adj[idx] {
                    if v[j].is_nan() {
                        v[j] = cost[idx * n + j] - u[idx];
                        stack.push((false, j));
                    }
                }
            } else {
                for &i in &col_adj[idx] {
                    if u[i].is_nan() {
                        u[i] = cost[i * n + idx] - v[idx];
                        stack.push((true, i));
                    }
                }
            }
        }
        (u, v)
    }

    /// Unique alternating cycle created by adding `(ei, ej)` to the basis
    /// tree, returned as the path cells from row `ei` to col `ej`. Signs
    /// alternate starting with minus.
    fn cycle_path(&self, ei: usize, ej: usize) -> Vec<(usize, usize)> {
        let (m, n) = (self.m, self.n);
        let mut row_adj: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut col_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in &self.basis {
            row_adj[i].push(j);
            col_adj[j].push(i);
        }
        // BFS over tree nodes: rows are 0..m, cols are m..m+n.
        let total = m + n;
        let mut parent = vec![usize::MAX; total];
        let mut seen = vec![false; total];
        let start = ei;
        let goal = m + ej;
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            if node < m {
                for &j in &row_adj[node] {
                    if !seen[m + j] {
                        seen[m + j] = true;
                        parent[m + j] = node;
                        queue.push_back(m + j);
                    }
                }
            } else {
                for &i in &col_adj[node - m] {
                    if !seen[i] {
                        seen[i] = true;
                        parent[i] = node;
                        queue.push_back(i);
                    }
                }
            }
        }
        debug_assert!(seen[goal], "basis must form a spanning tree");
        let mut nodes = vec![goal];
        let mut cur = goal;
        while cur != start {
            cur = parent[cur];
            nodes.push(cur);
        }
        nodes.reverse(); // start (row ei) .. goal (col ej)
        let mut cells = Vec::with_capacity(nodes.len() - 1);
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let cell = if a < m { (a, b - m) } else { (b, a - m) };
            cells.push(cell);
        }
        cells
    }

    fn pivot(&mut self, ei: usize, ej: usize) {
        let n = self.n;
        let path = self.cycle_path(ei, ej);
        // Minus positions are the even path indices.
        let mut theta = f64::INFINITY;
        for (k, &(i, j)) in path.iter().enumerate() {
            if k % 2 == 0 {
                theta = theta.min(self.flow[i * n + j]);
            }
        }
        // Degeneracy: among the minimizers, the smallest-index cell leaves.
        let mut leaving = (usize::MAX, usize::MAX);
        for (k, &(i, j)) in path.iter().enumerate() {
            if k % 2 == 0 && self.flow[i * n + j] <= theta + 1e-15 && (i, j) < leaving {
                leaving = (i, j);
            }
        }
        let theta = theta.max(0.0);
        self.flow[ei * n + ej] += theta;
        for (k, &(i, j)) in path.iter().enumerate() {
            if k % 2 == 0 {
                let f = &mut self.flow[i * n + j];
                *f = (*f - theta).max(0.0);
            } else {
                self.flow[i * n + j] += theta;
            }
        }
        self.in_basis[leaving.0 * n + leaving.1] = false;
        self.flow[leaving.0 * n + leaving.1] = 0.0;
        self.in_basis[ei * n + ej] = true;
        let pos = self
            .basis
            .iter()
            .position(|&c| c == leaving)
            .expect("leaving cell is basic");
        self.basis[pos] = (ei, ej);
    }
}

/// Exact minimum-cost plan for a balanced problem via the transportation
/// simplex: northwest-corner start, then potential/cycle improvement until
/// no reduced cost is negative. Entering variables use the most-negative
/// rule with lexicographic tie-breaks; after a stall budget the rule falls
/// back to Bland's smallest-index rule, which cannot cycle.
pub fn solve_exact(p: &TransportProblem) -> Result<TransportPlan> {
    let (m, n) = (p.rows(), p.cols());
    let scale = p.cost.iter().cloned().fold(1.0f64, f64::max);
    let tol = REDUCED_COST_TOL * scale;
    let mut state = SimplexState::northwest_corner(&p.supply, &p.demand);
    let bland_after = 200 + 20 * (m + n);
    let max_pivots = 2000 + 200 * (m + n) * (m + n);
    let mut pivots = 0usize;
    loop {
        let (u, v) = state.potentials(&p.cost);
        let mut entering: Option<(usize, usize)> = None;
        if pivots < bland_after {
            let mut best = -tol;
            for i in 0..m {
                for j in 0..n {
                    if state.in_basis[i * n + j] {
                        continue;
                    }
                    let rc = p.cost[i * n + j] - u[i] - v[j];
                    if rc < best {
                        best = rc;
                        entering = Some((i, j));
                    }
                }
            }
        } else {
            'scan: for i in 0..m {
                for j in 0..n {
                    if !state.in_basis[i * n + j] && p.cost[i * n + j] - u[i] - v[j] < -tol {
                        entering = Some((i, j));
                        break 'scan;
                    }
                }
            }
        }
        let Some((ei, ej)) = entering else {
            break;
        };
        state.pivot(ei, ej);
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Convergence {
                iterations: pivots,
                residual: f64::NAN,
            });
        }
    }
    Ok(TransportPlan {
        objective: objective_of(&p.cost, &state.flow),
        flow: state.flow,
        rows: m,
        cols: n,
    })
}

// ---------------------------------------------------------------------------
// Entropic approximation: log-domain Sinkhorn with feasibility rounding.
// ---------------------------------------------------------------------------

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One Sinkhorn solve at fixed `epsilon`, warm-startable through `init`.
fn sinkhorn_once(
    p: &TransportProblem,
    epsilon: f64,
    max_iter: usize,
    residual_tol: f64,
    init: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    let (m, n) = (p.rows(), p.cols());
    // Zero-mass rows and columns are excluded; their potentials stay -inf
    // so their plan entries vanish.
    let log_a: Vec<f64> = p.supply.iter().map(|&a| if a > 0.0 { a.ln() } else { f64::NEG_INFINITY }).collect();
    let log_b: Vec<f64> = p.demand.iter().map(|&b| if b > 0.0 { b.ln() } else { f64::NEG_INFINITY }).collect();
    let (mut f, mut g) = init.unwrap_or((vec![0.0; m], vec![0.0; n]));
    let mut plan = vec![0.0; m * n];
    for iter in 1..=max_iter {
        for j in 0..n {
            if p.demand[j] <= 0.0 {
                g[j] = f64::NEG_INFINITY;
                continue;
            }
            let lse = log_sum_exp((0..m).map(|i| (f[i] - p.cost[i * n + j]) / epsilon));
            g[j] = epsilon * (log_b[j] - lse);
        }
        for i in 0..m {
            if p.supply[i] <= 0.0 {
                f[i] = f64::NEG_INFINITY;
                continue;
            }
            let lse = log_sum_exp((0..n).map(|j| (g[j] - p.cost[i * n + j]) / epsilon));
            f[i] = epsilon * (log_a[i] - lse);
        }
        for i in 0..m {
            for j in 0..n {
                let e = (f[i] + g[j] - p.cost[i * n + j]) / epsilon;
                plan[i * n + j] = if e.is_finite() { e.exp() } else { 0.0 };
            }
        }
        // Rows are exact right after the f-update; the residual lives in
        // the columns.
        let mut residual = 0.0f64;
        for j in 0..n {
            let sum: f64 = (0..m).map(|i| plan[i * n + j]).sum();
            residual = residual.max((sum - p.demand[j]).abs());
        }
        if residual < residual_tol {
            return Ok((plan, f, g, iter));
        }
        if iter == max_iter {
            return Err(Error::Convergence {
                iterations: iter,
                residual,
            });
        }
    }
    unreachable!("loop returns or errors")
}

/// Project an approximately feasible plan onto the transportation polytope:
/// scale rows then columns down to their marginals and spread the leftover
/// mass as a rank-one correction. The result is exactly feasible, so its
/// objective can never undercut the exact optimum.
fn round_to_feasible(p: &TransportProblem, plan: &mut [f64]) {
    let (m, n) = (p.rows(), p.cols());
    for i in 0..m {
        let sum: f64 = plan[i * n..(i + 1) * n].iter().sum();
        if sum > 0.0 {
            let r = (p.supply[i] / sum).min(1.0);
            for x in &mut plan[i * n..(i + 1) * n] {
                *x *= r;
            }
        }
    }
    for j in 0..n {
        let sum: f64 = (0..m).map(|i| plan[i * n + j]).sum();
        if sum > 0.0 {
            let r = (p.demand[j] / sum).min(1.0);
            for i in 0..m {
                plan[i * n + j] *= r;
            }
        }
    }
    let mut err_a = vec![0.0; m];
    let mut err_b = vec![0.0; n];
    for i in 0..m {
        let sum: f64 = plan[i * n..(i + 1) * n].iter().sum();
        err_a[i] = (p.supply[i] - sum).max(0.0);
    }
    for j in 0..n {
        let sum: f64 = (0..m).map(|i| plan[i * n + j]).sum();
        err_b[j] = (p.demand[j] - sum).max(0.0);
    }
    let total: f64 = err_a.iter().sum();
    if total > 0.0 {
        for i in 0..m {
            for j in 0..n {
                plan[i * n + j] += err_a[i] * err_b[j] / total;
            }
        }
    }
}

/// Entropic-regularized plan at a fixed `epsilon`.
pub fn solve_sinkhorn(p: &TransportProblem, epsilon: f64, max_iter: usize) -> Result<TransportPlan> {
    if !(epsilon > 0.0) {
        return Err(Error::Config("sinkhorn epsilon must be positive".into()));
    }
    let (mut plan, _, _, _) = sinkhorn_once(p, epsilon, max_iter, 1e-6, None)?;
    round_to_feasible(p, &mut plan);
    Ok(TransportPlan {
        objective: objective_of(&p.cost, &plan),
        rows: p.rows(),
        cols: p.cols(),
        flow: plan,
    })
}

/// Sinkhorn with an epsilon-annealing schedule: start loose, halve epsilon
/// while warm-starting the potentials, finish at `epsilon_min`.
pub fn solve_sinkhorn_annealed(
    p: &TransportProblem,
    epsilon_min: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    if !(epsilon_min > 0.0) {
        return Err(Error::Config("sinkhorn epsilon must be positive".into()));
    }
    let scale = p.cost.iter().cloned().fold(0.0f64, f64::max).max(epsilon_min);
    let mut epsilon = scale;
    let mut carry: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut plan;
    loop {
        let (stage_plan, f, g, _) = sinkhorn_once(p, epsilon, max_iter, 1e-6, carry.take())?;
        carry = Some((f, g));
        plan = stage_plan;
        if epsilon <= epsilon_min {
            break;
        }
        epsilon = (epsilon * 0.5).max(epsilon_min);
    }
    round_to_feasible(p, &mut plan);
    Ok(TransportPlan {
        objective: objective_of(&p.cost, &plan),
        rows: p.rows(),
        cols: p.cols(),
        flow: plan,
    })
}

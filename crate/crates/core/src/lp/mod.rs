//! Fractional vertex-deletion LP.
//!
//! For a graph `G` and threshold `τ` the program is
//!
//! ```text
//! maximize   −Σ_v x_v
//! subject to y_e ≥ 1 − x_u − x_w      for every edge e = (u, w)
//!            Σ_{e ∋ v} y_e ≤ τ          for every node v
//!            0 ≤ x, y ≤ 1
//! ```
//!
//! `x_v` is the fraction of node `v` deleted and `y_e` the fraction of edge
//! `e` kept. The optimum is a relaxation of the minimum number of node
//! deletions that bring the maximum degree down to `τ`.

mod lu;
pub(crate) mod simplex;

use std::fmt::Write as _;
use std::sync::atomic::AtomicBool;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::graph::{Edge, Graph, NodeId};
use simplex::{Outcome, Sense, SparseLp};

#[derive(Clone, Debug)]
pub struct LpProblem {
    n: usize,
    edges: Vec<Edge>,
    tau: f64,
}

/// Builds the LP for `g` at threshold `tau`. Always feasible (`x ≡ 1, y ≡ 0`).
pub fn build_del_n_lp(g: &Graph, tau: f64) -> Result<LpProblem> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("LP threshold must be positive, got {tau}")));
    }
    Ok(LpProblem {
        n: g.node_count(),
        edges: g.edges().to_vec(),
        tau,
    })
}

impl LpProblem {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of `x` variables (one per node).
    pub fn node_vars(&self) -> usize {
        self.n
    }

    /// Number of `y` variables (one per edge).
    pub fn edge_vars(&self) -> usize {
        self.edges.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.n + self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for e in &self.edges {
            d[e.lo] += 1;
            d[e.hi] += 1;
        }
        d
    }

    /// CPLEX LP text for cross-checking with external solvers.
    pub fn to_lp_format(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "\\ fractional vertex deletion, tau = {}", self.tau);
        s.push_str("Maximize\n obj:");
        if self.n == 0 {
            s.push_str(" 0 x0");
        }
        for v in 0..self.n {
            let _ = write!(s, " - x{v}");
        }
        s.push_str("\nSubject To\n");
        for e in &self.edges {
            let _ = writeln!(
                s,
                " e{}_{}: y{}_{} + x{} + x{} >= 1",
                e.lo, e.hi, e.lo, e.hi, e.lo, e.hi
            );
        }
        let mut inc: Vec<Vec<&Edge>> = vec![Vec::new(); self.n];
        for e in &self.edges {
            inc[e.lo].push(e);
            inc[e.hi].push(e);
        }
        for (v, es) in inc.iter().enumerate() {
            if es.is_empty() {
                continue;
            }
            let terms: Vec<String> = es.iter().map(|e| format!("y{}_{}", e.lo, e.hi)).collect();
            let _ = writeln!(s, " n{v}: {} <= {}", terms.join(" + "), self.tau);
        }
        s.push_str("Bounds\n");
        for v in 0..self.n {
            let _ = writeln!(s, " 0 <= x{v} <= 1");
        }
        for e in &self.edges {
            let _ = writeln!(s, " 0 <= y{}_{} <= 1", e.lo, e.hi);
        }
        s.push_str("End\n");
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    /// The certified upper bound fell below the requested level first.
    EarlyStopped,
    Infeasible,
    Cancelled,
}

#[derive(Clone, Debug, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective (`−Σ x`) of the returned feasible point.
    pub objective: f64,
    /// Certified upper bound on the optimum.
    pub upper_bound: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions<'a> {
    /// Stop once the optimum is certified to lie strictly below this value.
    pub early_stop_below: Option<f64>,
    pub tol: f64,
    pub cancel: Option<&'a AtomicBool>,
}

impl Default for SolveOptions<'_> {
    fn default() -> Self {
        SolveOptions {
            early_stop_below: None,
            tol: 1e-7,
            cancel: None,
        }
    }
}

pub fn solve(p: &LpProblem, opts: &SolveOptions<'_>) -> Result<LpSolution> {
    solve_warm(p, opts, None).map(|r| r.0)
}

/// Solver state at the end of a solve. Passing it back for the same problem
/// continues where the previous call stopped, which makes a sequence of
/// early-stopped solves at decreasing levels cost no more than one full solve.
#[derive(Clone, Debug, Default)]
pub struct WarmStart(Option<simplex::Basis>);

/// [`solve`], optionally resuming from an earlier call on the same problem.
pub fn solve_warm(
    p: &LpProblem,
    opts: &SolveOptions<'_>,
    warm: Option<&WarmStart>,
) -> Result<(LpSolution, WarmStart)> {
    if !(opts.tol > 0.0) {
        return Err(invalid("solver tolerance must be positive"));
    }
    let tau = p.tau;
    let deg = p.degrees();
    let m_edges = p.edges.len();
    let mut x = vec![0.0; p.n];
    let mut y = vec![1.0; m_edges];

    // Edges whose endpoints both have degree ≤ τ keep y = 1 for free, and
    // nodes of degree ≤ τ cannot violate their row.
    let kept: Vec<usize> = (0..m_edges)
        .filter(|&i| {
            let e = p.edges[i];
            deg[e.lo] as f64 > tau || deg[e.hi] as f64 > tau
        })
        .collect();
    if kept.is_empty() {
        let sol = LpSolution {
            status: LpStatus::Optimal,
            objective: 0.0,
            upper_bound: 0.0,
            x,
            y,
            iterations: 0,
        };
        return Ok((sol, WarmStart(None)));
    }

    const NONE: usize = usize::MAX;
    let mut xcol = vec![NONE; p.n];
    let mut xnodes: Vec<NodeId> = Vec::new();
    for &i in &kept {
        let e = p.edges[i];
        for v in [e.lo, e.hi] {
            if xcol[v] == NONE {
                xcol[v] = xnodes.len();
                xnodes.push(v);
            }
        }
    }
    let mut node_row = vec![NONE; p.n];
    let mut heavy: Vec<NodeId> = Vec::new();
    for v in 0..p.n {
        if deg[v] as f64 > tau {
            node_row[v] = kept.len() + heavy.len();
            heavy.push(v);
        }
    }
    let nx = xnodes.len();
    let n = nx + kept.len();
    let m = kept.len() + heavy.len();

    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, &i) in kept.iter().enumerate() {
        let e = p.edges[i];
        cols[xcol[e.lo]].push((r, 1.0));
        cols[xcol[e.hi]].push((r, 1.0));
        let yc = nx + r;
        cols[yc].push((r, 1.0));
        for v in [e.lo, e.hi] {
            if node_row[v] != NONE {
                cols[yc].push((node_row[v], 1.0));
            }
        }
    }
    let mut col_start = vec![0];
    let mut col_idx = Vec::new();
    let mut col_val = Vec::new();
    for c in &mut cols {
        c.sort_unstable_by_key(|t| t.0);
        for &(i, a) in c.iter() {
            col_idx.push(i);
            col_val.push(a);
        }
        col_start.push(col_idx.len());
    }
    let mut cost = vec![1.0; nx];
    cost.resize(n, 0.0);
    let mut rhs = vec![1.0; kept.len()];
    rhs.resize(m, tau);
    let mut sense = vec![Sense::Ge; kept.len()];
    sense.resize(m, Sense::Le);
    let lp = SparseLp {
        n,
        m,
        col_start,
        col_idx,
        col_val,
        cost,
        lower: vec![0.0; n],
        upper: vec![1.0; n],
        start_upper: vec![true; n],
        rhs,
        sense,
    };

    let res = simplex::solve(
        &lp,
        &simplex::Options {
            // max-form bound b < s  ⇔  min-form bound −b > −s
            stop_above: opts.early_stop_below.map(|s| -s),
            tol: opts.tol,
            cancel: opts.cancel,
        },
        warm.and_then(|w| w.0.as_ref()),
    )?;

    for (k, &v) in xnodes.iter().enumerate() {
        x[v] = res.z[k];
    }
    for (r, &i) in kept.iter().enumerate() {
        y[i] = res.z[nx + r];
    }
    let status = match res.outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::BoundReached => LpStatus::EarlyStopped,
        Outcome::Infeasible => {
            return Err(Error::Solver(format!(
                "dual simplex reported infeasibility for a feasible program (τ = {tau}, {} edges)",
                p.edges.len()
            )))
        }
        Outcome::Cancelled => LpStatus::Cancelled,
    };
    if status != LpStatus::Optimal {
        repair(p, &deg, &mut x, &mut y);
    }
    let objective = -x.iter().sum::<f64>();
    let sol = LpSolution {
        status,
        objective,
        upper_bound: -res.lower_bound,
        x,
        y,
        iterations: res.iterations,
    };
    Ok((sol, WarmStart(Some(res.basis))))
}

/// Turns an arbitrary point into a feasible one: clamp, give every edge the
/// smallest admissible `y`, then fully delete any node whose row still
/// overflows.
fn repair(p: &LpProblem, deg: &[usize], x: &mut [f64], y: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let need = |x: &[f64], e: &Edge| (1.0 - x[e.lo] - x[e.hi]).max(0.0);
    let mut load = vec![0.0; p.n];
    for (i, e) in p.edges.iter().enumerate() {
        y[i] = if (deg[e.lo] as f64) <= p.tau && (deg[e.hi] as f64) <= p.tau {
            1.0
        } else {
            need(x, e)
        };
        load[e.lo] += y[i];
        load[e.hi] += y[i];
    }
    for v in 0..p.n {
        if load[v] > p.tau {
            x[v] = 1.0;
        }
    }
    for (i, e) in p.edges.iter().enumerate() {
        if x[e.lo] == 1.0 || x[e.hi] == 1.0 {
            y[i] = 0.0;
        }
    }
}

const ROUNDING_GUARD: f64 = 1e-9;

/// Nodes with `x_v > 1/3` (values within `1e-9` of the threshold count as not above).
pub fn removed_nodes(sol: &LpSolution) -> Vec<NodeId> {
    sol.x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 1.0 / 3.0 + ROUNDING_GUARD)
        .map(|(i, _)| i)
        .collect()
}

/// Deletes every node with `x_v > 1/3` together with its edges.
pub fn round_subgraph(g: &Graph, sol: &LpSolution) -> Graph {
    let mut mask = vec![false; g.node_count()];
    for v in removed_nodes(sol) {
        mask[v] = true;
    }
    g.without_nodes(&mask)
}

#[cfg(test)]
mod tests;

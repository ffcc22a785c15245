//! Bounded-variable dual simplex.
//!
//! Solves `min cᵀz` subject to `A z + σ = b` and finite bounds on every
//! structural `z_j`. Each row gets a logical `σ_i` whose bounds come from the
//! row sense intersected with the range the row activity can actually take,
//! so every variable is boxed. With boxed variables the all-logical basis is
//! dual feasible for any cost vector, and any dual vector `π` yields a valid
//! Lagrangian lower bound; both facts are what allow early termination with a
//! certified bound.

use std::sync::atomic::{AtomicBool, Ordering};

use super::lu::Factor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) enum Sense {
    Le,
    Ge,
    Eq,
}

/// Column-compressed problem data.
#[derive(Clone, Debug)]
pub(crate) struct SparseLp {
    pub n: usize,
    pub m: usize,
    pub col_start: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub col_val: Vec<f64>,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Where zero-cost structurals start (true = upper bound).
    pub start_upper: Vec<bool>,
    pub rhs: Vec<f64>,
    pub sense: Vec<Sense>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    /// The certified lower bound on the minimum rose above the requested level.
    BoundReached,
    Infeasible,
    Cancelled,
}

#[derive(Debug)]
pub(crate) struct SimplexResult {
    pub outcome: Outcome,
    /// Structural values at termination (primal feasible only when optimal).
    pub z: Vec<f64>,
    /// `cᵀz` of the returned point.
    #[cfg_attr(not(test), allow(dead_code))]
    pub objective: f64,
    /// Certified lower bound on the optimum.
    pub lower_bound: f64,
    pub iterations: usize,
    pub basis: Basis,
}

/// Basis and pricing weights of a stopped solve; enough to resume it.
#[derive(Clone, Debug)]
pub(crate) struct Basis {
    head: Vec<usize>,
    at_upper: Vec<bool>,
    dse: Vec<f64>,
}

pub(crate) struct Options<'a> {
    /// Stop as soon as the certified lower bound exceeds this value.
    pub stop_above: Option<f64>,
    pub tol: f64,
    pub cancel: Option<&'a AtomicBool>,
}

const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const BOUND_CHECK_EVERY: usize = 16;
const STALL_LIMIT: usize = 200;

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Basic(usize),
    Lower,
    Upper,
}

struct Solver<'a> {
    lp: &'a SparseLp,
    n: usize,
    m: usize,
    row_start: Vec<usize>,
    row_idx: Vec<usize>,
    row_val: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    cost: Vec<f64>,
    head: Vec<usize>,
    state: Vec<State>,
    x: Vec<f64>,
    d: Vec<f64>,
    dse: Vec<f64>,
    factor: Factor,
    iota: Vec<usize>,
    tol: f64,
    dual_tol: f64,
}

/// Logical `σ_i` for row `i` is variable `n + i`, with column `e_i`.
fn logical_bounds(lp: &SparseLp) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut min_act = vec![0.0; lp.m];
    let mut max_act = vec![0.0; lp.m];
    for j in 0..lp.n {
        for t in lp.col_start[j]..lp.col_start[j + 1] {
            let (i, a) = (lp.col_idx[t], lp.col_val[t]);
            let (p, q) = (a * lp.lower[j], a * lp.upper[j]);
            min_act[i] += p.min(q);
            max_act[i] += p.max(q);
        }
    }
    let mut lo = Vec::with_capacity(lp.m);
    let mut up = Vec::with_capacity(lp.m);
    for i in 0..lp.m {
        let (mut l, mut u) = (lp.rhs[i] - max_act[i], lp.rhs[i] - min_act[i]);
        match lp.sense[i] {
            Sense::Le => l = l.max(0.0),
            Sense::Ge => u = u.min(0.0),
            Sense::Eq => {
                l = 0.0;
                u = 0.0;
            }
        }
        if l > u {
            // no activity in reach of the row sense
            if l > u + 1e-9 {
                return None;
            }
            u = l;
        }
        lo.push(l);
        up.push(u);
    }
    Some((lo, up))
}

/// Solves from the all-logical basis, or from `warm` if it was produced for
/// the same program.
pub(crate) fn solve(lp: &SparseLp, opts: &Options<'_>, warm: Option<&Basis>) -> Result<SimplexResult> {
    let (n, m) = (lp.n, lp.m);
    for j in 0..n {
        if !(lp.lower[j].is_finite() && lp.upper[j].is_finite() && lp.lower[j] <= lp.upper[j]) {
            return Err(Error::Solver(format!("variable {j} is not boxed")));
        }
    }
    let Some((slo, sup)) = logical_bounds(lp) else {
        return Ok(SimplexResult {
            outcome: Outcome::Infeasible,
            z: lp.lower.clone(),
            objective: (0..n).map(|j| lp.cost[j] * lp.lower[j]).sum(),
            lower_bound: f64::INFINITY,
            iterations: 0,
            basis: Basis {
                head: (n..n + m).collect(),
                at_upper: vec![false; n + m],
                dse: vec![1.0; m],
            },
        });
    };
    let mut lo = lp.lower.clone();
    lo.extend(slo);
    let mut up = lp.upper.clone();
    up.extend(sup);
    let mut cost = lp.cost.clone();
    cost.resize(n + m, 0.0);

    let mut row_count = vec![0usize; m + 1];
    for &i in &lp.col_idx {
        row_count[i + 1] += 1;
    }
    for i in 0..m {
        row_count[i + 1] += row_count[i];
    }
    let row_start = row_count.clone();
    let mut fill = row_count;
    let mut row_idx = vec![0; lp.col_idx.len()];
    let mut row_val = vec![0.0; lp.col_idx.len()];
    for j in 0..n {
        for t in lp.col_start[j]..lp.col_start[j + 1] {
            let i = lp.col_idx[t];
            row_idx[fill[i]] = j;
            row_val[fill[i]] = lp.col_val[t];
            fill[i] += 1;
        }
    }

    let mut state = vec![State::Lower; n + m];
    let mut x = vec![0.0; n + m];
    for j in 0..n {
        let at_upper = cost[j] < 0.0 || (cost[j] == 0.0 && lp.start_upper[j]);
        if at_upper {
            state[j] = State::Upper;
            x[j] = up[j];
        } else {
            x[j] = lo[j];
        }
    }
    let head: Vec<usize> = (n..n + m).collect();
    for (p, &v) in head.iter().enumerate() {
        state[v] = State::Basic(p);
    }
    let iota: Vec<usize> = (0..m).collect();
    let factor = Factor::new(m, |p| (&iota[p..p + 1], &UNIT_VAL[..]))
        .map_err(|_| Error::Solver("identity basis reported singular".into()))?;
    let mut s = Solver {
        lp,
        n,
        m,
        row_start,
        row_idx,
        row_val,
        lo,
        up,
        cost,
        head,
        state,
        x,
        d: vec![0.0; n + m],
        dse: vec![1.0; m],
        factor,
        iota,
        tol: opts.tol,
        dual_tol: opts.tol,
    };
    if let Some(b) = warm.filter(|b| b.head.len() == m && b.at_upper.len() == n + m) {
        for j in 0..n + m {
            let (st, v) = if b.at_upper[j] { (State::Upper, s.up[j]) } else { (State::Lower, s.lo[j]) };
            s.state[j] = st;
            s.x[j] = v;
        }
        for (p, &j) in b.head.iter().enumerate() {
            s.state[j] = State::Basic(p);
        }
        s.head.copy_from_slice(&b.head);
        s.dse.copy_from_slice(&b.dse);
        s.refactor()?;
    }
    s.recompute();
    s.run(opts)
}

impl Solver<'_> {
    fn column(&self, j: usize) -> (&[usize], &[f64]) {
        column_of(self.lp, self.n, &self.iota, j)
    }

    fn refactor(&mut self) -> Result<()> {
        for _attempt in 0..self.m + 1 {
            let (lp, n, iota, head) = (self.lp, self.n, &self.iota, &self.head);
            let res = self.factor.factorize(|p| column_of(lp, n, iota, head[p]));
            match res {
                Ok(()) => return Ok(()),
                Err(sing) => {
                    // swap the dependent structurals out for logicals
                    for (pos, row) in sing.pairs {
                        let out = self.head[pos];
                        let inn = self.n + row;
                        let mid = 0.5 * (self.lo[out] + self.up[out]);
                        if self.x[out] >= mid {
                            self.state[out] = State::Upper;
                            self.x[out] = self.up[out];
                        } else {
                            self.state[out] = State::Lower;
                            self.x[out] = self.lo[out];
                        }
                        self.head[pos] = inn;
                        self.state[inn] = State::Basic(pos);
                        self.dse[pos] = 1.0;
                    }
                }
            }
        }
        Err(Error::Solver("could not repair a singular basis".into()))
    }

    /// Fresh basic values and reduced costs from the current basis.
    fn recompute(&mut self) {
        let mut v = self.lp.rhs.clone();
        for j in 0..self.n + self.m {
            if matches!(self.state[j], State::Basic(_)) || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            let (idx, val) = self.column(j);
            for (&i, &a) in idx.iter().zip(val) {
                v[i] -= a * xj;
            }
        }
        self.factor.ftran(&mut v);
        for p in 0..self.m {
            self.x[self.head[p]] = v[p];
        }

        let pi = self.duals();
        for j in 0..self.n + self.m {
            self.d[j] = match self.state[j] {
                State::Basic(_) => 0.0,
                _ => self.cost[j] - self.dot_column(j, &pi),
            };
        }
    }

    fn duals(&mut self) -> Vec<f64> {
        let mut pi: Vec<f64> = self.head.iter().map(|&j| self.cost[j]).collect();
        self.factor.btran(&mut pi);
        pi
    }

    fn dot_column(&self, j: usize, pi: &[f64]) -> f64 {
        let (idx, val) = self.column(j);
        idx.iter().zip(val).map(|(&i, &a)| a * pi[i]).sum()
    }

    /// Flips nonbasic variables whose reduced cost has the wrong sign.
    /// Returns true if anything moved.
    fn restore_dual_feasibility(&mut self) -> bool {
        let mut flipped = false;
        for j in 0..self.n + self.m {
            let wrong = match self.state[j] {
                State::Lower => self.d[j] < -self.dual_tol,
                State::Upper => self.d[j] > self.dual_tol,
                State::Basic(_) => false,
            };
            if wrong && self.lo[j] < self.up[j] {
                flipped = true;
                if self.state[j] == State::Lower {
                    self.state[j] = State::Upper;
                    self.x[j] = self.up[j];
                } else {
                    self.state[j] = State::Lower;
                    self.x[j] = self.lo[j];
                }
            }
        }
        flipped
    }

    /// Lagrangian bound `πᵀb + Σ_j min(d_j l_j, d_j u_j)` for the current duals.
    fn certified_bound(&mut self) -> f64 {
        let pi = self.duals();
        let mut lb: f64 = pi.iter().zip(&self.lp.rhs).map(|(p, b)| p * b).sum();
        for j in 0..self.n + self.m {
            let dj = self.cost[j] - self.dot_column(j, &pi);
            lb += (dj * self.lo[j]).min(dj * self.up[j]);
        }
        lb
    }

    fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lo[j] - self.tol {
            self.lo[j] - v
        } else if v > self.up[j] + self.tol {
            v - self.up[j]
        } else {
            0.0
        }
    }

    fn finish(&mut self, outcome: Outcome, iterations: usize, lower_bound: f64) -> SimplexResult {
        SimplexResult {
            outcome,
            z: self.x[..self.n].to_vec(),
            objective: self.objective(),
            lower_bound,
            iterations,
            basis: Basis {
                head: self.head.clone(),
                at_upper: self.state.iter().map(|&st| st == State::Upper).collect(),
                dse: self.dse.clone(),
            },
        }
    }

    fn run(&mut self, opts: &Options<'_>) -> Result<SimplexResult> {
        let (n, m) = (self.n, self.m);
        let cap = 50 * (n + m) + 10_000;
        let mut alpha = vec![0.0; n + m];
        let mut mark = vec![false; n + m];
        let mut touched: Vec<usize> = Vec::new();
        let mut rho = vec![0.0; m];
        let mut w = vec![0.0; m];
        let mut tau = vec![0.0; m];
        let mut cand: Vec<(f64, usize)> = Vec::new();
        let mut harris: Vec<f64> = Vec::new();
        let mut flips: Vec<usize> = Vec::new();
        let mut flip_col = vec![0.0; m];
        let mut fresh = true;
        let mut stall = 0usize;
        let mut iter = 0usize;

        if self.restore_dual_feasibility() {
            self.recompute();
        }

        loop {
            if let Some(c) = opts.cancel {
                if c.load(Ordering::Relaxed) {
                    let lb = self.certified_bound();
                    return Ok(self.finish(Outcome::Cancelled, iter, lb));
                }
            }
            if iter >= cap {
                return Err(Error::Solver(format!(
                    "iteration limit {cap} reached (rows {m}, columns {n}, objective {})",
                    self.objective()
                )));
            }
            if self.factor.eta_count() >= REFACTOR_EVERY {
                self.refactor()?;
                self.recompute();
                if self.restore_dual_feasibility() {
                    self.recompute();
                }
                fresh = true;
            }
            if let Some(level) = opts.stop_above {
                if iter % BOUND_CHECK_EVERY == 0 {
                    let lb = self.certified_bound();
                    if lb > level {
                        return Ok(self.finish(Outcome::BoundReached, iter, lb));
                    }
                }
            }
            // leaving row
            let bland = stall > STALL_LIMIT;
            let mut r = usize::MAX;
            let mut best = 0.0;
            for p in 0..m {
                let j = self.head[p];
                let inf = self.infeasibility(j);
                if inf <= 0.0 {
                    continue;
                }
                if bland {
                    if r == usize::MAX || j < self.head[r] {
                        r = p;
                    }
                } else {
                    let score = inf * inf / self.dse[p];
                    if score > best {
                        best = score;
                        r = p;
                    }
                }
            }
            if r == usize::MAX {
                if !fresh {
                    self.refactor()?;
                    self.recompute();
                    if self.restore_dual_feasibility() {
                        self.recompute();
                    }
                    fresh = true;
                    continue;
                }
                let lb = self.certified_bound();
                return Ok(self.finish(Outcome::Optimal, iter, lb));
            }
            iter += 1;

            let leave = self.head[r];
            let to_lower = self.x[leave] < self.lo[leave];
            let target = if to_lower { self.lo[leave] } else { self.up[leave] };

            rho.iter_mut().for_each(|v| *v = 0.0);
            rho[r] = 1.0;
            self.factor.btran(&mut rho);
            touched.clear();
            for (i, &ri) in rho.iter().enumerate() {
                if ri == 0.0 {
                    continue;
                }
                for t in self.row_start[i]..self.row_start[i + 1] {
                    let j = self.row_idx[t];
                    if !mark[j] {
                        mark[j] = true;
                        touched.push(j);
                    }
                    alpha[j] += ri * self.row_val[t];
                }
                let j = n + i;
                if !mark[j] {
                    mark[j] = true;
                    touched.push(j);
                }
                alpha[j] += ri;
            }

            // Bound-flipping ratio test with Harris tolerances on α̃ = ∓α.
            // Breakpoints are passed (their variables flipped to the opposite
            // bound) while the dual objective keeps improving.
            let sign = if to_lower { -1.0 } else { 1.0 };
            cand.clear();
            for &j in &touched {
                let at = match self.state[j] {
                    State::Basic(_) => continue,
                    s => s,
                };
                if self.lo[j] == self.up[j] {
                    continue;
                }
                let a = sign * alpha[j];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                if matches!((at, a > 0.0), (State::Lower, true) | (State::Upper, false)) {
                    cand.push(((self.d[j] / a).max(0.0), j));
                }
            }
            flips.clear();
            let mut q = usize::MAX;
            if bland {
                let mut q_ratio = f64::INFINITY;
                for &(ratio, j) in &cand {
                    if ratio < q_ratio - 1e-12 || (ratio <= q_ratio + 1e-12 && j < q) {
                        q = j;
                        q_ratio = ratio;
                    }
                }
            } else if !cand.is_empty() {
                let harris_of = |j: usize| (self.d[j].abs() + self.dual_tol) / alpha[j].abs();
                let breadth = |j: usize| alpha[j].abs() * (self.up[j] - self.lo[j]);
                let mut slope = (self.x[leave] - target).abs();
                // the first group needs no sorting; it usually decides the step
                let theta_max = cand.iter().map(|c| harris_of(c.1)).fold(f64::INFINITY, f64::min);
                let mut end = 0;
                let mut drop = 0.0;
                for t in 0..cand.len() {
                    if cand[t].0 <= theta_max {
                        drop += breadth(cand[t].1);
                        cand.swap(t, end);
                        end += 1;
                    }
                }
                let mut k = 0;
                if slope - drop > self.tol && end < cand.len() {
                    slope -= drop;
                    flips.extend(cand[..end].iter().map(|c| c.1));
                    k = end;
                    cand[k..].sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                    harris.clear();
                    harris.resize(cand.len() + 1, f64::INFINITY);
                    for t in (k..cand.len()).rev() {
                        harris[t] = harris[t + 1].min(harris_of(cand[t].1));
                    }
                    loop {
                        // harris[k] ≥ cand[k].0, so the group is never empty
                        let theta_max = harris[k];
                        end = k;
                        drop = 0.0;
                        while end < cand.len() && cand[end].0 <= theta_max {
                            drop += breadth(cand[end].1);
                            end += 1;
                        }
                        if slope - drop > self.tol && end < cand.len() {
                            slope -= drop;
                            flips.extend(cand[k..end].iter().map(|c| c.1));
                            k = end;
                        } else {
                            break;
                        }
                    }
                }
                {
                    // pass the weakest members of the last group while the
                    // slope stays positive, enter the strongest remaining one
                    let group = &mut cand[k..end];
                    group.sort_unstable_by(|a, b| alpha[a.1].abs().total_cmp(&alpha[b.1].abs()));
                    let mut g = 0;
                    while g + 1 < group.len() {
                        let j = group[g].1;
                        let dj = breadth(j);
                        if slope - dj <= self.tol {
                            break;
                        }
                        slope -= dj;
                        flips.push(j);
                        g += 1;
                    }
                    q = group[group.len() - 1].1;
                }
            }
            if q == usize::MAX {
                for &j in &touched {
                    alpha[j] = 0.0;
                    mark[j] = false;
                }
                if !fresh {
                    self.refactor()?;
                    self.recompute();
                    if self.restore_dual_feasibility() {
                        self.recompute();
                    }
                    fresh = true;
                    continue;
                }
                let lb = self.certified_bound();
                return Ok(self.finish(Outcome::Infeasible, iter, lb));
            }

            // entering column
            w.iter_mut().for_each(|v| *v = 0.0);
            {
                let (idx, val) = self.column(q);
                for (&i, &a) in idx.iter().zip(val) {
                    w[i] = a;
                }
            }
            self.factor.ftran(&mut w);
            let alpha_q = alpha[q];
            let wr = w[r];
            if (wr - alpha_q).abs() > 1e-6 * (1.0 + wr.abs()) || wr.abs() <= PIVOT_TOL {
                for &j in &touched {
                    alpha[j] = 0.0;
                    mark[j] = false;
                }
                if fresh {
                    return Err(Error::Solver(format!(
                        "unstable pivot: row {r} gives {alpha_q:e}, column {q} gives {wr:e}"
                    )));
                }
                self.refactor()?;
                self.recompute();
                if self.restore_dual_feasibility() {
                    self.recompute();
                }
                fresh = true;
                continue;
            }
            // flipped bounds move the basic values
            if !flips.is_empty() {
                flip_col.iter_mut().for_each(|v| *v = 0.0);
                for &j in &flips {
                    let (nv, st) = match self.state[j] {
                        State::Lower => (self.up[j], State::Upper),
                        _ => (self.lo[j], State::Lower),
                    };
                    let step = nv - self.x[j];
                    self.x[j] = nv;
                    self.state[j] = st;
                    let (idx, val) = self.column(j);
                    for (&i, &a) in idx.iter().zip(val) {
                        flip_col[i] += a * step;
                    }
                }
                self.factor.ftran(&mut flip_col);
                for p in 0..m {
                    if flip_col[p] != 0.0 {
                        let j = self.head[p];
                        self.x[j] -= flip_col[p];
                    }
                }
            }

            // duals
            let mut theta = self.d[q] / (sign * alpha_q);
            if theta < 0.0 {
                theta = 0.0;
            }
            if theta > 0.0 {
                for &j in &touched {
                    if !matches!(self.state[j], State::Basic(_)) {
                        self.d[j] -= theta * sign * alpha[j];
                    }
                }
            }
            self.d[q] = 0.0;
            self.d[leave] = -theta * sign;

            // primals
            let delta = (self.x[leave] - target) / wr;
            for p in 0..m {
                if w[p] != 0.0 {
                    let j = self.head[p];
                    self.x[j] -= delta * w[p];
                }
            }
            self.x[q] += delta;
            self.x[leave] = target;

            // steepest-edge weights
            let beta_r = rho.iter().map(|v| v * v).sum::<f64>();
            tau.copy_from_slice(&rho);
            self.factor.ftran(&mut tau);
            for p in 0..m {
                if p == r || w[p] == 0.0 {
                    continue;
                }
                let k = w[p] / wr;
                let b = self.dse[p] - 2.0 * k * tau[p] + k * k * beta_r;
                self.dse[p] = b.max(1e-8);
            }
            self.dse[r] = (beta_r / (wr * wr)).max(1e-8);

            // basis
            self.factor.update(r, &w);
            self.state[leave] = if to_lower { State::Lower } else { State::Upper };
            self.state[q] = State::Basic(r);
            self.head[r] = q;
            fresh = false;

            if theta > 1e-12 {
                stall = 0;
            } else {
                stall += 1;
            }
            for &j in &touched {
                alpha[j] = 0.0;
                mark[j] = false;
            }
        }
    }
}

const UNIT_VAL: [f64; 1] = [1.0];

fn column_of<'a>(lp: &'a SparseLp, n: usize, iota: &'a [usize], j: usize) -> (&'a [usize], &'a [f64]) {
    if j < n {
        let r = lp.col_start[j]..lp.col_start[j + 1];
        (&lp.col_idx[r.clone()], &lp.col_val[r])
    } else {
        let i = j - n;
        (&iota[i..i + 1], &UNIT_VAL[..])
    }
}


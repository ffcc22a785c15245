//! Private maximum-degree estimators.
//!
//! * [`edge_dp_max_degree`]: SVT over the degree-excess query, edge-DP.
//! * [`node_dp_max_degree_exp`]: SVT over the exact vertex-deletion count on a
//!   doubling schedule, node-DP, exponential time.
//! * [`node_dp_max_degree_poly`]: the same scan over the LP relaxation, with
//!   candidates evaluated in parallel and LPs stopped as soon as their bound
//!   rules the candidate out.
//!
//! Node-DP noise is drawn up front in a fixed order (threshold, one value per
//! candidate in ascending order, then the release noise for τ*), so the result
//! does not depend on how many workers evaluate candidates.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;

use crate::dp::{svt, Charge, NoiseSource, PrivacyParams, SvtOutcome};
use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::lp::{self, LpStatus, SolveOptions, WarmStart};

/// Default node limit of the brute-force deletion oracle.
pub const EXACT_ORACLE_LIMIT: usize = 16;

/// `−½ Σ_{deg(v) ≥ τ} (deg(v) − τ)`.
pub fn q_del_deg(g: &Graph, tau: usize) -> f64 {
    let excess: usize = (0..g.node_count())
        .map(|v| g.degree(v).saturating_sub(tau))
        .sum();
    -(excess as f64) / 2.0
}

/// Minus the fewest node deletions that leave maximum degree ≤ `tau`.
pub fn q_del_n_exact(g: &Graph, tau: usize) -> Result<f64> {
    q_del_n_exact_with_limit(g, tau, EXACT_ORACLE_LIMIT)
}

pub fn q_del_n_exact_with_limit(g: &Graph, tau: usize, limit: usize) -> Result<f64> {
    let n = g.node_count();
    if n > limit || n > 30 {
        return Err(Error::OracleSize { nodes: n, limit: limit.min(30) });
    }
    if g.max_degree() <= tau {
        return Ok(0.0);
    }
    let mut adj = vec![0u32; n];
    for e in g.edges() {
        adj[e.lo] |= 1 << e.hi;
        adj[e.hi] |= 1 << e.lo;
    }
    let all: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let ok = |removed: u32| {
        let keep = all & !removed;
        (0..n).all(|v| keep & (1 << v) == 0 || (adj[v] & keep).count_ones() as usize <= tau)
    };
    for k in 1..=n {
        // subsets of size k in increasing numeric order (Gosper's hack)
        let mut s: u32 = (1u32 << k) - 1;
        while s <= all {
            if ok(s) {
                return Ok(-(k as f64));
            }
            let c = s & s.wrapping_neg();
            let r = s + c;
            if r == 0 || r > all {
                break;
            }
            s = (((r ^ s) >> 2) / c) | r;
        }
    }
    Ok(-(n as f64))
}

/// Optimum of the fractional deletion LP.
pub fn q_lp_del_n(g: &Graph, tau: f64) -> Result<f64> {
    let sol = lp::solve(&lp::build_del_n_lp(g, tau)?, &SolveOptions::default())?;
    Ok(canonical(sol.objective))
}

/// Edge-DP SVT scan over `τ = 1, 2, …, max(N, 1)`; returns the first firing `τ`,
/// or the last candidate if none fires.
pub fn edge_dp_max_degree(g: &Graph, eps: f64, beta: f64, src: &mut NoiseSource) -> Result<usize> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(format!("ε must be positive, got {eps}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("β must lie in (0, 1), got {beta}")));
    }
    let t = -4.0 * (2.0 / beta).ln() / eps;
    let cap = g.node_count().max(1);
    let queries = (1..=cap).map(|tau| (tau, move || Ok(q_del_deg(g, tau))));
    Ok(match svt(t, queries, eps, 1, src)? {
        SvtOutcome::Fired { index, .. } => index,
        SvtOutcome::Exhausted { .. } => cap,
    })
}

/// `1, 2, 4, …` below `max(N, 1)`, then `N` itself as a final candidate.
pub fn candidate_schedule(n: usize) -> Vec<usize> {
    let cap = n.max(1);
    let mut c = Vec::new();
    let mut tau = 1;
    while tau < cap {
        c.push(tau);
        tau *= 2;
    }
    c.push(cap);
    c
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ApproxTimings {
    pub svt_s: f64,
    pub total_s: f64,
    /// Simplex iterations spent by this run (zero for cached values).
    pub lp_iterations: usize,
    pub lp_solves: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DegreeApproxOutput {
    pub tau_star: f64,
    /// `max(1, ⌈τ*⌉)`.
    pub tau_star_int: usize,
    pub tau_svt: usize,
    /// Exact query value at `tau_svt`.
    pub q_at_tau: f64,
    /// Number of candidates the SVT scan consumed.
    pub iterations: usize,
    /// τ* came out ≤ 0 and was replaced by 1.
    pub clamped: bool,
    /// No candidate fired; `tau_svt` is the final candidate.
    pub exhausted: bool,
    /// Budget spent: the SVT scan and the release of τ*.
    pub charges: Vec<Charge>,
    pub timings: ApproxTimings,
}

#[derive(Clone, Copy, Debug)]
pub struct ApproxOptions<'a> {
    /// Threads evaluating candidates concurrently (0 is treated as 1).
    pub workers: usize,
    /// Shared LP results for repeated runs on the same graph.
    pub cache: Option<&'a LpCache>,
}

impl Default for ApproxOptions<'_> {
    fn default() -> Self {
        ApproxOptions { workers: 1, cache: None }
    }
}

/// Node-DP approximation with the exact deletion oracle.
pub fn node_dp_max_degree_exp(g: &Graph, p: PrivacyParams, src: &mut NoiseSource) -> Result<DegreeApproxOutput> {
    if g.node_count() > EXACT_ORACLE_LIMIT {
        return Err(Error::OracleSize { nodes: g.node_count(), limit: EXACT_ORACLE_LIMIT });
    }
    node_dp_scan(g, p, src, 1, 1, &|tau, level, _| {
        let q = q_del_n_exact(g, tau)?;
        Ok(Eval::Exact { q, fired: q > level, iterations: 0 })
    })
}

/// Node-DP approximation with the LP relaxation.
pub fn node_dp_max_degree_poly(
    g: &Graph,
    p: PrivacyParams,
    src: &mut NoiseSource,
    opts: ApproxOptions<'_>,
) -> Result<DegreeApproxOutput> {
    let local;
    let cache = match opts.cache {
        Some(c) => c,
        None => {
            local = LpCache::new();
            &local
        }
    };
    node_dp_scan(g, p, src, 3, opts.workers, &|tau, level, cancel| cache.evaluate(g, tau as f64, level, cancel))
}

enum Eval {
    Exact { q: f64, fired: bool, iterations: usize },
    /// The optimum is certified to lie below the candidate's level.
    Below { iterations: usize },
    Cancelled,
}

type Evaluator<'a> = dyn Fn(usize, f64, &AtomicBool) -> Result<Eval> + Sync + 'a;

fn node_dp_scan(
    g: &Graph,
    p: PrivacyParams,
    src: &mut NoiseSource,
    factor: u32,
    workers: usize,
    eval: &Evaluator<'_>,
) -> Result<DegreeApproxOutput> {
    let start = Instant::now();
    let eps = p.eps;
    let t = -8.0 * (4.0 / p.beta).ln() / eps;
    let cands = candidate_schedule(g.node_count());
    let t_noisy = t + src.laplace(4.0 / eps)?;
    let mut levels = Vec::with_capacity(cands.len());
    for _ in &cands {
        levels.push(t_noisy - src.laplace(4.0 / eps)?);
    }
    let f = factor as f64;
    let release_noise = src.laplace(2.0 * f / eps)?;

    let scan = run_candidates(&cands, &levels, workers, eval)?;
    let svt_s = start.elapsed().as_secs_f64();
    let (idx, q, exhausted) = match scan.fired {
        Some((i, q)) => (i, q, false),
        None => {
            // no candidate fired: fall back to the last one, whose value the
            // scan has not necessarily computed exactly
            let i = cands.len() - 1;
            let flag = AtomicBool::new(false);
            let q = match eval(cands[i], f64::NEG_INFINITY, &flag)? {
                Eval::Exact { q, .. } => q,
                _ => return Err(Error::Solver("could not evaluate the final candidate".into())),
            };
            (i, q, true)
        }
    };
    let tau = cands[idx];
    let tau_star = f * tau as f64 + f * q.abs() + release_noise + (2.0 * f / eps) * confidence(p).ln() + 1.0;
    let clamped = tau_star <= 0.0;
    let tau_star_int = if clamped { 1 } else { (tau_star.ceil() as usize).max(1) };
    Ok(DegreeApproxOutput {
        tau_star,
        tau_star_int,
        tau_svt: tau,
        q_at_tau: q,
        iterations: idx + 1,
        clamped,
        exhausted,
        charges: vec![
            Charge { label: "degree-approx/svt".into(), eps: eps / 2.0, delta: 0.0 },
            Charge { label: "degree-approx/release".into(), eps: eps / 2.0, delta: p.delta },
        ],
        timings: ApproxTimings {
            svt_s,
            total_s: start.elapsed().as_secs_f64(),
            lp_iterations: scan.iterations,
            lp_solves: scan.evaluated,
        },
    })
}

/// `max(1/δ, 2/β)`; with `δ = 0` only the utility term remains, and the
/// release stays pure ε-DP either way.
fn confidence(p: PrivacyParams) -> f64 {
    if p.delta > 0.0 {
        (1.0 / p.delta).max(2.0 / p.beta)
    } else {
        2.0 / p.beta
    }
}

struct Scan {
    fired: Option<(usize, f64)>,
    iterations: usize,
    evaluated: usize,
}

/// Evaluates candidates in ascending order on up to `workers` threads. The
/// answer is the smallest firing candidate; work above a firing candidate is
/// cancelled, which never changes the answer.
fn run_candidates(cands: &[usize], levels: &[f64], workers: usize, eval: &Evaluator<'_>) -> Result<Scan> {
    let k = cands.len();
    let next = AtomicUsize::new(0);
    let lowest_fired = AtomicUsize::new(usize::MAX);
    let failed = AtomicBool::new(false);
    let cancel: Vec<AtomicBool> = (0..k).map(|_| AtomicBool::new(false)).collect();
    let results: Mutex<Vec<Option<Result<Eval>>>> = Mutex::new((0..k).map(|_| None).collect());

    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= k || i > lowest_fired.load(Ordering::SeqCst) || failed.load(Ordering::SeqCst) {
            break;
        }
        let r = eval(cands[i], levels[i], &cancel[i]);
        match &r {
            Ok(Eval::Exact { fired: true, .. }) => {
                lowest_fired.fetch_min(i, Ordering::SeqCst);
                for c in &cancel[i + 1..] {
                    c.store(true, Ordering::SeqCst);
                }
            }
            Err(_) => {
                failed.store(true, Ordering::SeqCst);
                for c in &cancel {
                    c.store(true, Ordering::SeqCst);
                }
            }
            _ => {}
        }
        results.lock().expect("result slot poisoned")[i] = Some(r);
    };
    let workers = workers.clamp(1, k);
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    let mut scan = Scan { fired: None, iterations: 0, evaluated: 0 };
    let results = results.into_inner().expect("result slot poisoned");
    for r in results.iter().flatten() {
        match r {
            Ok(Eval::Exact { iterations, .. } | Eval::Below { iterations }) => {
                scan.iterations += iterations;
                scan.evaluated += 1;
            }
            _ => {}
        }
    }
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(Ok(Eval::Exact { q, fired: true, .. })) => {
                scan.fired = Some((i, q));
                return Ok(scan);
            }
            Some(Ok(Eval::Exact { .. } | Eval::Below { .. })) => {}
            Some(Err(e)) => return Err(e),
            Some(Ok(Eval::Cancelled)) | None => {
                return Err(Error::Solver(format!("candidate {} was never decided", cands[i])));
            }
        }
    }
    Ok(scan)
}

/// Snaps LP optima to a 1e-9 grid, well inside the solver tolerance, so that
/// values reached through different bases compare equal.
fn canonical(q: f64) -> f64 {
    let r = (q * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Default)]
struct CacheEntry {
    exact: Option<f64>,
    /// Best certified upper bound on the optimum seen so far.
    bound: f64,
    warm: WarmStart,
}

/// LP results per threshold for one graph, shared across runs and threads.
///
/// Each entry remembers the exact optimum once known, otherwise the best
/// certified bound and the solver state, so a later request at a lower level
/// resumes instead of starting over.
#[derive(Default)]
pub struct LpCache {
    fingerprint: Mutex<Option<u64>>,
    entries: Mutex<HashMap<u64, Arc<Mutex<CacheEntry>>>>,
}

fn fingerprint(g: &Graph) -> u64 {
    let mut h = DefaultHasher::new();
    g.node_count().hash(&mut h);
    g.edges().hash(&mut h);
    h.finish()
}

impl std::fmt::Debug for LpCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.entries.lock().map(|m| m.len()).unwrap_or(0);
        f.debug_struct("LpCache").field("entries", &n).finish()
    }
}

impl LpCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn entry(&self, g: &Graph, tau: f64) -> Result<Arc<Mutex<CacheEntry>>> {
        let fp = fingerprint(g);
        {
            let mut f = self.fingerprint.lock().expect("cache poisoned");
            match *f {
                None => *f = Some(fp),
                Some(x) if x != fp => return Err(Error::Contract("LP cache reused for a different graph".into())),
                _ => {}
            }
        }
        let mut map = self.entries.lock().expect("cache poisoned");
        Ok(map
            .entry(tau.to_bits())
            .or_insert_with(|| {
                Arc::new(Mutex::new(CacheEntry {
                    bound: f64::INFINITY,
                    ..CacheEntry::default()
                }))
            })
            .clone())
    }

    /// Exact optimum at `tau`, solving or resuming as needed.
    pub fn exact(&self, g: &Graph, tau: f64) -> Result<f64> {
        let flag = AtomicBool::new(false);
        match self.evaluate(g, tau, f64::NEG_INFINITY, &flag)? {
            Eval::Exact { q, .. } => Ok(q),
            _ => Err(Error::Solver("LP did not reach optimality".into())),
        }
    }

    fn evaluate(&self, g: &Graph, tau: f64, level: f64, cancel: &AtomicBool) -> Result<Eval> {
        let entry = self.entry(g, tau)?;
        let mut e = entry.lock().expect("cache poisoned");
        if let Some(q) = e.exact {
            return Ok(Eval::Exact { q, fired: q > level, iterations: 0 });
        }
        if e.bound < level {
            return Ok(Eval::Below { iterations: 0 });
        }
        let problem = lp::build_del_n_lp(g, tau)?;
        let opts = SolveOptions {
            early_stop_below: level.is_finite().then_some(level),
            cancel: Some(cancel),
            ..SolveOptions::default()
        };
        let (sol, warm) = lp::solve_warm(&problem, &opts, Some(&e.warm))?;
        e.warm = warm;
        e.bound = e.bound.min(sol.upper_bound);
        Ok(match sol.status {
            LpStatus::Optimal => {
                let q = canonical(sol.objective);
                e.exact = Some(q);
                e.warm = WarmStart::default();
                Eval::Exact { q, fired: q > level, iterations: sol.iterations }
            }
            LpStatus::EarlyStopped => Eval::Below { iterations: sol.iterations },
            LpStatus::Cancelled => Eval::Cancelled,
            LpStatus::Infeasible => return Err(Error::Solver("deletion LP reported infeasible".into())),
        })
    }
}

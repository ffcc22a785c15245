//! Brute-force oracles and property-check drivers.
//!
//! Randomized checks derive one seed per trial from a base seed, so a report
//! does not depend on how trials are spread over threads. Any violation keeps
//! the lowest-numbered failing trial as a replayable witness.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clipping::{certified_distance, clip_graph};
use crate::degree_approx::{
    edge_dp_max_degree, node_dp_max_degree_exp, node_dp_max_degree_poly, q_del_deg, q_del_n_exact, q_lp_del_n,
    ApproxOptions, LpCache,
};
use crate::dp::{derive_seed, svt, NoiseSource, PrivacyParams, SvtOutcome};
use crate::error::{invalid, Result};
use crate::graph::{generate, make_node_neighbor, toggle_edge, Attach, Graph, Model};

/// Slack allowed on LP values.
pub const LP_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    /// Edge list of the (first) graph.
    pub graph: String,
    /// Edge list of the neighbour, when the property involves a pair.
    pub other: Option<String>,
    pub detail: String,
}

impl Witness {
    fn new(g: &Graph, other: Option<&Graph>, detail: String) -> Self {
        Witness { graph: edge_list(g), other: other.map(edge_list), detail }
    }
}

fn edge_list(g: &Graph) -> String {
    let mut buf = Vec::new();
    g.write_edge_list(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("edge lists are ASCII")
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: u64,
    pub violations: u64,
    pub witness: Option<Witness>,
    /// Allowed violation frequency for statistical properties.
    pub tolerance: Option<f64>,
}

impl PropertyReport {
    pub fn frequency(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.violations as f64 / self.trials as f64
        }
    }

    pub fn passed(&self) -> bool {
        match self.tolerance {
            None => self.violations == 0,
            Some(t) => self.frequency() <= t,
        }
    }
}

/// `β + 3σ` for a binomial failure count over `n` trials.
pub fn binomial_slack(beta: f64, n: u64) -> f64 {
    beta + 3.0 * (beta * (1.0 - beta) / n.max(1) as f64).sqrt()
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `f` for every index in `0..count` on all cores and tallies violations.
fn tally<F>(property: &str, count: u64, f: F) -> Result<PropertyReport>
where
    F: Fn(u64) -> Result<Option<Witness>> + Sync,
{
    let next = AtomicUsize::new(0);
    let state: Mutex<(u64, Option<(u64, Witness)>, Option<crate::Error>)> = Mutex::new((0, None, None));
    std::thread::scope(|s| {
        for _ in 0..threads().min(count.max(1) as usize) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed) as u64;
                if i >= count {
                    break;
                }
                let r = f(i);
                let mut st = state.lock().expect("tally poisoned");
                match r {
                    Ok(None) => {}
                    Ok(Some(w)) => {
                        st.0 += 1;
                        if st.1.as_ref().map_or(true, |(j, _)| i < *j) {
                            st.1 = Some((i, w));
                        }
                    }
                    Err(e) => {
                        st.2.get_or_insert(e);
                        next.store(usize::MAX / 2, Ordering::Relaxed);
                    }
                }
            });
        }
    });
    let (violations, witness, err) = state.into_inner().expect("tally poisoned");
    if let Some(e) = err {
        return Err(e);
    }
    Ok(PropertyReport {
        property: property.to_string(),
        trials: count,
        violations,
        witness: witness.map(|w| w.1),
        tolerance: None,
    })
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, trial))
}

fn random_graph<R: Rng>(max_n: usize, rng: &mut R) -> Result<Graph> {
    let n = rng.gen_range(1..=max_n.max(1));
    let p = rng.gen_range(0.0..=1.0);
    generate(&Model::Gnp { n, p }, rng)
}

/// Every labelled graph on `n` nodes, by edge-set bitmask.
pub fn graph_from_mask(n: usize, mask: u64) -> Graph {
    let mut pairs = Vec::new();
    let mut bit = 0;
    for u in 0..n {
        for v in u + 1..n {
            if mask >> bit & 1 == 1 {
                pairs.push((u, v));
            }
            bit += 1;
        }
    }
    Graph::from_edges(n, pairs).expect("valid pairs")
}

/// Number of labelled graphs on `n` nodes.
pub fn graph_count(n: usize) -> u64 {
    1u64 << (n * n.saturating_sub(1) / 2)
}

/// `τ + N_τ(base)` bound on the clipped distance of node neighbours, for
/// every `τ` of the form `deg^k(base)`.
pub fn check_clip_distance(trials: u64, max_n: usize, seed: u64) -> Result<PropertyReport> {
    if max_n > 30 {
        return Err(invalid("clip-distance check is limited to 30 nodes"));
    }
    tally("clip-distance", trials, |t| {
        let mut rng = trial_rng(seed, t);
        let g = random_graph(max_n.saturating_sub(1).max(1), &mut rng)?;
        let p = rng.gen_range(0.0..=1.0);
        let pair = make_node_neighbor(&g, &Attach::Random(p), &mut rng)?;
        clip_distance_violation(&pair.base, &pair.extended)
    })
}

/// Checks one ordered pair `(base, extended)` with `base ⊆ extended`.
pub fn clip_distance_violation(base: &Graph, extended: &Graph) -> Result<Option<Witness>> {
    let n = base.node_count();
    for k in 1..=n {
        let tau = base.kth_degree(k)?;
        if tau == 0 {
            break;
        }
        let d = clip_graph(base, tau)?.clipped.edge_distance(&clip_graph(extended, tau)?.clipped);
        let bound = certified_distance(base, tau);
        if d > bound {
            return Ok(Some(Witness::new(base, Some(extended), format!("k={k} tau={tau} distance={d} bound={bound}"))));
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Query {
    DelDeg,
    DelNExact,
    LpDelN,
}

impl Query {
    pub fn parse(s: &str) -> Result<Query> {
        match s {
            "del_deg" | "del-deg" => Ok(Query::DelDeg),
            "del_n_exact" | "del-n-exact" => Ok(Query::DelNExact),
            "lp_del_n" | "lp-del-n" => Ok(Query::LpDelN),
            _ => Err(invalid(format!("unknown query {s:?}"))),
        }
    }

    pub fn eval(self, g: &Graph, tau: usize) -> Result<f64> {
        match self {
            Query::DelDeg => Ok(q_del_deg(g, tau)),
            Query::DelNExact => q_del_n_exact(g, tau),
            Query::LpDelN => q_lp_del_n(g, tau as f64),
        }
    }

    fn tol(self) -> f64 {
        if self == Query::LpDelN {
            LP_TOL
        } else {
            0.0
        }
    }

    fn name(self) -> &'static str {
        match self {
            Query::DelDeg => "del-deg",
            Query::DelNExact => "del-n-exact",
            Query::LpDelN => "lp-del-n",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborKind {
    Edge,
    Node,
}

/// `|Q(base) − Q(ext)| ≤ 1` and `Q(base) ≥ Q(ext)` for `base ⊆ ext`, at every
/// `τ ∈ [1, deg(ext) + 1]`.
pub fn sensitivity_violation(q: Query, base: &Graph, ext: &Graph) -> Result<Option<Witness>> {
    let tol = q.tol();
    for tau in 1..=ext.max_degree() + 1 {
        let a = q.eval(base, tau)?;
        let b = q.eval(ext, tau)?;
        if (a - b).abs() > 1.0 + tol || b > a + tol {
            return Ok(Some(Witness::new(base, Some(ext), format!("tau={tau} q(base)={a} q(ext)={b}"))));
        }
    }
    Ok(None)
}

fn property_name(q: Query, kind: NeighborKind, exhaustive: bool) -> String {
    let k = match kind {
        NeighborKind::Edge => "edge",
        NeighborKind::Node => "node",
    };
    format!("sensitivity/{}/{k}{}", q.name(), if exhaustive { "/exhaustive" } else { "" })
}

/// Random neighbour pairs with up to `max_n` nodes.
pub fn check_query_sensitivity(
    q: Query,
    kind: NeighborKind,
    trials: u64,
    max_n: usize,
    seed: u64,
) -> Result<PropertyReport> {
    tally(&property_name(q, kind, false), trials, |t| {
        let mut rng = trial_rng(seed, t);
        match kind {
            NeighborKind::Edge => {
                let g = random_graph(max_n.max(2), &mut rng)?;
                let n = g.node_count().max(2);
                let g = if g.node_count() < 2 { Graph::empty(2) } else { g };
                let u = rng.gen_range(0..n);
                let mut v = rng.gen_range(0..n - 1);
                if v >= u {
                    v += 1;
                }
                let h = toggle_edge(&g, u, v)?;
                let (base, ext) = if g.has_edge(u, v) { (h, g) } else { (g, h) };
                sensitivity_violation(q, &base, &ext)
            }
            NeighborKind::Node => {
                let g = random_graph(max_n.saturating_sub(1).max(1), &mut rng)?;
                let p = rng.gen_range(0.0..=1.0);
                let pair = make_node_neighbor(&g, &Attach::Random(p), &mut rng)?;
                sensitivity_violation(q, &pair.base, &pair.extended)
            }
        }
    })
}

/// Every neighbour pair whose larger graph has at most `max_n` nodes.
pub fn check_query_sensitivity_exhaustive(q: Query, kind: NeighborKind, max_n: usize) -> Result<PropertyReport> {
    // (base node count, mask) for every base graph
    let bases: Vec<(usize, u64)> = match kind {
        NeighborKind::Edge => (2..=max_n).flat_map(|n| (0..graph_count(n)).map(move |m| (n, m))).collect(),
        NeighborKind::Node => (0..max_n).flat_map(|n| (0..graph_count(n)).map(move |m| (n, m))).collect(),
    };
    let pairs = std::sync::atomic::AtomicU64::new(0);
    let mut rep = tally(&property_name(q, kind, true), bases.len() as u64, |i| {
        let (n, mask) = bases[i as usize];
        let g = graph_from_mask(n, mask);
        match kind {
            NeighborKind::Edge => {
                for u in 0..n {
                    for v in u + 1..n {
                        if g.has_edge(u, v) {
                            continue;
                        }
                        pairs.fetch_add(1, Ordering::Relaxed);
                        let ext = toggle_edge(&g, u, v)?;
                        if let Some(w) = sensitivity_violation(q, &g, &ext)? {
                            return Ok(Some(w));
                        }
                    }
                }
            }
            NeighborKind::Node => {
                for attach in 0..1u64 << n {
                    pairs.fetch_add(1, Ordering::Relaxed);
                    let nodes = (0..n).filter(|&u| attach >> u & 1 == 1).collect();
                    let pair = make_node_neighbor(&g, &Attach::Nodes(nodes), &mut ChaCha8Rng::seed_from_u64(0))?;
                    if let Some(w) = sensitivity_violation(q, &pair.base, &pair.extended)? {
                        return Ok(Some(w));
                    }
                }
            }
        }
        Ok(None)
    })?;
    rep.trials = pairs.into_inner();
    Ok(rep)
}

/// `|Q_exact(G, 3τ)| ≤ 3|Q_LP(G, τ)|` and `|Q_LP(G, τ)| ≤ |Q_exact(G, τ)|`
/// for every `τ ∈ [1, deg(G)]`.
pub fn lp_vs_exact_violation(g: &Graph) -> Result<Option<Witness>> {
    for tau in 1..=g.max_degree() {
        let lp = q_lp_del_n(g, tau as f64)?.abs();
        let exact = q_del_n_exact(g, tau)?.abs();
        let exact3 = q_del_n_exact(g, 3 * tau)?.abs();
        if exact3 > 3.0 * lp + LP_TOL || lp > exact + LP_TOL {
            return Ok(Some(Witness::new(
                g,
                None,
                format!("tau={tau} lp={lp} exact={exact} exact(3tau)={exact3}"),
            )));
        }
    }
    Ok(None)
}

pub fn check_lp_vs_exact(trials: u64, max_n: usize, seed: u64) -> Result<PropertyReport> {
    if max_n > 12 {
        return Err(invalid("LP-vs-exact check is limited to 12 nodes"));
    }
    tally("lp-vs-exact", trials, |t| {
        let g = random_graph(max_n, &mut trial_rng(seed, t))?;
        lp_vs_exact_violation(&g)
    })
}

pub fn check_lp_vs_exact_exhaustive(max_n: usize) -> Result<PropertyReport> {
    let graphs: Vec<(usize, u64)> = (1..=max_n).flat_map(|n| (0..graph_count(n)).map(move |m| (n, m))).collect();
    tally("lp-vs-exact/exhaustive", graphs.len() as u64, |i| {
        let (n, m) = graphs[i as usize];
        lp_vs_exact_violation(&graph_from_mask(n, m))
    })
}

/// `N_{τ+|Q|+1}(G) ≤ |Q|` with `Q = Q_exact(G, τ)`, for every `τ ∈ [1, deg(G)]`
/// and every graph with at most `max_n` nodes.
pub fn check_saturation_bound_exhaustive(max_n: usize) -> Result<PropertyReport> {
    let graphs: Vec<(usize, u64)> = (1..=max_n).flat_map(|n| (0..graph_count(n)).map(move |m| (n, m))).collect();
    tally("saturation-bound/exhaustive", graphs.len() as u64, |i| {
        let (n, m) = graphs[i as usize];
        let g = graph_from_mask(n, m);
        for tau in 1..=g.max_degree() {
            let q = q_del_n_exact(&g, tau)?.abs();
            let t = tau as f64 + q + 1.0;
            if g.count_at_least(t) as f64 > q {
                return Ok(Some(Witness::new(&g, None, format!("tau={tau} |q|={q}"))));
            }
        }
        Ok(None)
    })
}

/// Same-seed comparison: the LP version stops at the same or an earlier
/// candidate than the exact version.
pub fn check_exp_vs_poly(trials: u64, max_n: usize, p: PrivacyParams, seed: u64) -> Result<PropertyReport> {
    tally("exp-vs-poly", trials, |t| {
        let mut rng = trial_rng(seed, t);
        let g = random_graph(max_n, &mut rng)?;
        let s = rng.gen();
        let exp = node_dp_max_degree_exp(&g, p, &mut NoiseSource::seeded(s))?;
        let poly = node_dp_max_degree_poly(&g, p, &mut NoiseSource::seeded(s), ApproxOptions::default())?;
        Ok((poly.tau_svt > exp.tau_svt).then(|| {
            Witness::new(&g, None, format!("noise seed {s}: poly tau={} exp tau={}", poly.tau_svt, exp.tau_svt))
        }))
    })
}

/// Query sequences with a known index `k` meeting the SVT premise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvtFamily {
    /// `len` queries all equal to `T + 4 ln(2/β)/ε`; `k = 1`.
    Constant { len: usize },
    /// Queries rising by one per step from far below the threshold, reaching
    /// `T + 4 ln(2/β)/ε` at index `k`.
    Ramp { len: usize, k: usize },
}

impl SvtFamily {
    fn queries(self, t: f64, lift: f64) -> (Vec<f64>, usize) {
        match self {
            SvtFamily::Constant { len } => (vec![t + lift; len], 1),
            SvtFamily::Ramp { len, k } => ((1..=len).map(|i| t + lift - (k as f64 - i as f64)).collect(), k),
        }
    }
}

/// Frequency of runs that miss `ℓ ≤ k` and `Q_ℓ ≥ T − (4/ε) ln(2k/β)`, against
/// `β` plus three binomial standard deviations.
pub fn check_svt_utility(eps: f64, beta: f64, family: SvtFamily, seeds: u64, seed: u64) -> Result<PropertyReport> {
    let t = -10.0;
    let lift = 4.0 * (2.0 / beta).ln() / eps;
    let (qs, k) = family.queries(t, lift);
    if k == 0 || k > qs.len() {
        return Err(invalid("SVT family needs 1 ≤ k ≤ len"));
    }
    let floor = t - 4.0 / eps * (2.0 * k as f64 / beta).ln();
    let mut rep = tally("svt-utility", seeds, |s| {
        let mut src = NoiseSource::derived(seed, s);
        let out = svt(t, qs.iter().enumerate().map(|(i, &q)| (i + 1, move || Ok(q))), eps, 1, &mut src)?;
        let ok = match out {
            SvtOutcome::Fired { index, .. } => index <= k && qs[index - 1] >= floor,
            SvtOutcome::Exhausted { .. } => false,
        };
        Ok((!ok).then(|| Witness::new(&Graph::empty(0), None, format!("noise round {s}: {out:?}"))))
    })?;
    rep.tolerance = Some(binomial_slack(beta, seeds));
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approximator {
    Edge,
    Exp,
    Poly,
}

/// `log₂` as it appears inside the iterated-log terms of the utility bounds.
fn ln_log(deg: usize) -> f64 {
    (4.0 * deg.max(1) as f64).log2().ln()
}

/// Utility bounds `(τ bound, saturation bound)` for the node-DP approximators;
/// the LP version's bounds are three times the exact version's.
pub fn utility_bounds(a: Approximator, g: &Graph, p: PrivacyParams) -> (f64, f64) {
    let d = g.max_degree();
    let eps = p.eps;
    let conf = if p.delta > 0.0 { (1.0 / p.delta).max(2.0 / p.beta) } else { 2.0 / p.beta };
    match a {
        Approximator::Edge => (d as f64, 4.0 / eps * (d.max(1) as f64).ln() + 8.0 / eps * (2.0 / p.beta).ln()),
        Approximator::Exp | Approximator::Poly => {
            let f = if a == Approximator::Poly { 3.0 } else { 1.0 };
            let sat = f * (8.0 / eps * ln_log(d) + 16.0 / eps * (4.0 / p.beta).ln());
            let tau = 2.0 * f * d as f64 + sat + 4.0 * f / eps * conf.ln() + 1.0;
            (tau, sat)
        }
    }
}

/// Runs an approximator `seeds` times on `g` and counts runs that break its
/// utility bounds. For the edge-DP scan the bounds are `τ ≤ deg(G)` and the
/// degree-excess value at the returned `τ`; for the node-DP versions they are
/// τ* and `N_{τ*}(G)`.
pub fn check_approx_utility(
    a: Approximator,
    g: &Graph,
    p: PrivacyParams,
    seeds: u64,
    seed: u64,
    workers: usize,
) -> Result<PropertyReport> {
    let (tau_bound, sat_bound) = utility_bounds(a, g, p);
    let cache = LpCache::new();
    let name = match a {
        Approximator::Edge => "utility/edge",
        Approximator::Exp => "utility/exp",
        Approximator::Poly => "utility/poly",
    };
    let mut rep = tally(name, seeds, |s| {
        let mut src = NoiseSource::derived(seed, s);
        let (tau, sat) = match a {
            Approximator::Edge => {
                let t = edge_dp_max_degree(g, p.eps, p.beta, &mut src)?;
                (t as f64, q_del_deg(g, t).abs())
            }
            Approximator::Exp => {
                let o = node_dp_max_degree_exp(g, p, &mut src)?;
                (o.tau_star, g.count_at_least(o.tau_star) as f64)
            }
            Approximator::Poly => {
                let o = node_dp_max_degree_poly(g, p, &mut src, ApproxOptions { workers, cache: Some(&cache) })?;
                (o.tau_star, g.count_at_least(o.tau_star) as f64)
            }
        };
        Ok((tau > tau_bound || sat > sat_bound).then(|| {
            Witness::new(g, None, format!("round {s}: tau={tau} (bound {tau_bound}) sat={sat} (bound {sat_bound})"))
        }))
    })?;
    rep.tolerance = Some(binomial_slack(p.beta, seeds));
    Ok(rep)
}

/// Frequency of `τ* + N_{τ*}(G) > 2τ*` for the node-DP approximators, against
/// `δ` plus three binomial standard deviations.
pub fn check_certificate(a: Approximator, g: &Graph, p: PrivacyParams, seeds: u64, seed: u64) -> Result<PropertyReport> {
    if a == Approximator::Edge {
        return Err(invalid("the certificate applies to the node-DP approximators"));
    }
    let cache = LpCache::new();
    let mut rep = tally("certificate", seeds, |s| {
        let mut src = NoiseSource::derived(seed, s);
        let o = match a {
            Approximator::Exp => node_dp_max_degree_exp(g, p, &mut src)?,
            _ => node_dp_max_degree_poly(g, p, &mut src, ApproxOptions { workers: 1, cache: Some(&cache) })?,
        };
        let sat = g.count_at_least(o.tau_star) as f64;
        Ok((sat > o.tau_star).then(|| Witness::new(g, None, format!("round {s}: tau*={} N={sat}", o.tau_star))))
    })?;
    rep.tolerance = Some(binomial_slack(p.delta, seeds));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(graph_count(0), 1);
        assert_eq!(graph_count(4), 64);
        assert_eq!(graph_from_mask(4, 63).edge_count(), 6);
        assert_eq!(graph_from_mask(3, 0b101).edges().len(), 2);
    }

    #[test]
    fn small_reports_pass() {
        assert!(check_clip_distance(300, 12, 1).unwrap().passed());
        assert!(check_query_sensitivity(Query::DelDeg, NeighborKind::Edge, 300, 10, 2).unwrap().passed());
        assert!(check_query_sensitivity(Query::DelNExact, NeighborKind::Node, 200, 8, 3).unwrap().passed());
        assert!(check_query_sensitivity(Query::LpDelN, NeighborKind::Node, 200, 10, 4).unwrap().passed());
        assert!(check_lp_vs_exact(100, 8, 5).unwrap().passed());
        let r = check_query_sensitivity_exhaustive(Query::DelDeg, NeighborKind::Edge, 4).unwrap();
        assert!(r.passed());
        // 1 + 3·4 + 0 pairs over bases on 2, 3, 4 nodes: each missing edge once
        assert_eq!(r.trials, 1 + 12 + (0..64u64).map(|m| 6 - m.count_ones() as u64).sum::<u64>());
    }

    #[test]
    fn violation_is_reported_with_witness() {
        // a pair that is not a node-neighbour pair breaks sensitivity 1
        let base = Graph::empty(5);
        let ext = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        let w = sensitivity_violation(Query::DelNExact, &base, &ext).unwrap().unwrap();
        assert!(w.other.is_some());
        assert!(w.detail.contains("tau=1"));
    }

    #[test]
    fn svt_constant_family() {
        let r = check_svt_utility(1.0, 0.1, SvtFamily::Constant { len: 20 }, 2000, 9).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = check_svt_utility(1.0, 0.1, SvtFamily::Ramp { len: 60, k: 30 }, 2000, 10).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}

//! Edge-DP task mechanisms and the node-DP pipelines built on them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clipping::{clip_graph, pi_theta_clip, ClipReport};
use crate::degree_approx::{edge_dp_max_degree, node_dp_max_degree_poly, ApproxOptions, DegreeApproxOutput};
use crate::dp::{group_privacy_scale, BudgetLedger, BudgetSplit, Charge, NoiseSource, PrivacyParams};
use crate::error::{invalid, Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Edge count.
    Ec,
    /// Two-path count.
    Tp,
    /// Maximum degree.
    Md,
    /// Degree distribution.
    Dd,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Ec => "ec",
            Task::Tp => "tp",
            Task::Md => "md",
            Task::Dd => "dd",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "ec" => Ok(Task::Ec),
            "tp" => Ok(Task::Tp),
            "md" => Ok(Task::Md),
            "dd" => Ok(Task::Dd),
            _ => Err(invalid(format!("unknown task {s:?} (expected ec, tp, md or dd)"))),
        }
    }

    /// The edge-DP mechanism for scalar tasks; `None` for the histogram.
    pub fn mechanism(self) -> Option<&'static dyn EdgeDpMechanism> {
        match self {
            Task::Ec => Some(&EdgeCount),
            Task::Tp => Some(&TwoPath),
            Task::Md => Some(&MaxDegree),
            Task::Dd => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TaskValue {
    Scalar(f64),
    Histogram(Vec<f64>),
}

impl TaskValue {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            TaskValue::Scalar(v) => Some(*v),
            TaskValue::Histogram(_) => None,
        }
    }

    pub fn histogram(&self) -> Option<&[f64]> {
        match self {
            TaskValue::Histogram(h) => Some(h),
            TaskValue::Scalar(_) => None,
        }
    }
}

/// Which random draws a result consumed.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NoiseAudit {
    pub draws: u64,
    /// Laplace scales of the draws that perturb the released value.
    pub scales: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StepTimings {
    pub approx_s: f64,
    pub clip_s: f64,
    pub mechanism_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskResult {
    pub task: Task,
    pub value: TaskValue,
    pub charges: Vec<Charge>,
    pub noise: NoiseAudit,
    pub clip: Option<ClipReport>,
    pub approx: Option<DegreeApproxOutput>,
    pub timings: StepTimings,
}

impl TaskResult {
    /// Total `(ε, δ)` charged.
    pub fn consumed(&self) -> (f64, f64) {
        self.charges
            .iter()
            .fold((0.0, 0.0), |(e, d), c| (e + c.eps, d + c.delta))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MechContext {
    /// Public upper bound on the input's maximum degree.
    pub tau_clip: usize,
}

pub trait EdgeDpMechanism: Sync {
    fn task(&self) -> Task;

    /// Edge global sensitivity of the released statistic on graphs whose
    /// maximum degree is at most `ctx.tau_clip`.
    fn sensitivity(&self, ctx: MechContext) -> f64;

    /// Noise-free answer.
    fn exact(&self, g: &Graph) -> f64;

    fn run(&self, g: &Graph, budget: PrivacyParams, ctx: MechContext, src: &mut NoiseSource) -> Result<TaskResult>;
}

fn scalar_result(task: Task, value: f64, budget: PrivacyParams, noise: NoiseAudit, secs: f64) -> TaskResult {
    TaskResult {
        task,
        value: TaskValue::Scalar(value),
        charges: vec![Charge { label: format!("{}/mechanism", task.name()), eps: budget.eps, delta: 0.0 }],
        noise,
        clip: None,
        approx: None,
        timings: StepTimings { mechanism_s: secs, ..StepTimings::default() },
    }
}

fn laplace_release(
    task: Task,
    value: f64,
    sensitivity: f64,
    budget: PrivacyParams,
    src: &mut NoiseSource,
) -> Result<TaskResult> {
    let start = Instant::now();
    let before = src.draws();
    let out = if sensitivity > 0.0 {
        let b = sensitivity / budget.eps;
        value + src.laplace(b)?
    } else {
        value
    };
    let noise = NoiseAudit {
        draws: src.draws() - before,
        scales: if sensitivity > 0.0 { vec![sensitivity / budget.eps] } else { Vec::new() },
    };
    Ok(scalar_result(task, out, budget, noise, start.elapsed().as_secs_f64()))
}

pub struct EdgeCount;

impl EdgeDpMechanism for EdgeCount {
    fn task(&self) -> Task {
        Task::Ec
    }

    fn sensitivity(&self, _: MechContext) -> f64 {
        1.0
    }

    fn exact(&self, g: &Graph) -> f64 {
        g.edge_count() as f64
    }

    fn run(&self, g: &Graph, budget: PrivacyParams, _: MechContext, src: &mut NoiseSource) -> Result<TaskResult> {
        laplace_release(Task::Ec, self.exact(g), 1.0, budget, src)
    }
}

/// `M + Lap(1/ε)`.
pub fn edge_count_mech(g: &Graph, eps: f64, src: &mut NoiseSource) -> Result<TaskResult> {
    EdgeCount.run(g, PrivacyParams::new(eps, 0.0, 0.5)?, MechContext { tau_clip: 1 }, src)
}

pub struct TwoPath;

impl EdgeDpMechanism for TwoPath {
    fn task(&self) -> Task {
        Task::Tp
    }

    /// Adding `(u, v)` creates `deg(u) + deg(v)` new two-paths, at most
    /// `2(τ − 1)` when both endpoints stay within `τ`.
    fn sensitivity(&self, ctx: MechContext) -> f64 {
        2.0 * ctx.tau_clip.saturating_sub(1) as f64
    }

    fn exact(&self, g: &Graph) -> f64 {
        g.two_path_count() as f64
    }

    fn run(&self, g: &Graph, budget: PrivacyParams, ctx: MechContext, src: &mut NoiseSource) -> Result<TaskResult> {
        if g.max_degree() > ctx.tau_clip {
            return Err(Error::Contract(format!(
                "two-path mechanism needs max degree ≤ {}, got {}",
                ctx.tau_clip,
                g.max_degree()
            )));
        }
        laplace_release(Task::Tp, self.exact(g), self.sensitivity(ctx), budget, src)
    }
}

/// `P₂(G) + Lap(2(τ − 1)/ε)`.
pub fn two_path_count_mech(g: &Graph, eps: f64, tau_clip: usize, src: &mut NoiseSource) -> Result<TaskResult> {
    TwoPath.run(g, PrivacyParams::new(eps, 0.0, 0.5)?, MechContext { tau_clip }, src)
}

pub struct MaxDegree;

impl EdgeDpMechanism for MaxDegree {
    fn task(&self) -> Task {
        Task::Md
    }

    /// Sensitivity of each degree-excess query in the scan.
    fn sensitivity(&self, _: MechContext) -> f64 {
        1.0
    }

    fn exact(&self, g: &Graph) -> f64 {
        g.max_degree() as f64
    }

    fn run(&self, g: &Graph, budget: PrivacyParams, _: MechContext, src: &mut NoiseSource) -> Result<TaskResult> {
        let start = Instant::now();
        let before = src.draws();
        let tau = edge_dp_max_degree(g, budget.eps, budget.beta, src)?;
        let draws = src.draws() - before;
        let noise = NoiseAudit {
            draws,
            // threshold, then one draw per scanned query
            scales: vec![2.0 / budget.eps; draws as usize],
        };
        Ok(scalar_result(Task::Md, tau as f64, budget, noise, start.elapsed().as_secs_f64()))
    }
}

pub fn max_degree_edge_mech(g: &Graph, eps: f64, beta: f64, src: &mut NoiseSource) -> Result<TaskResult> {
    MaxDegree.run(g, PrivacyParams::new(eps, 0.0, beta)?, MechContext { tau_clip: 1 }, src)
}

/// Log-scale degree bins `{0}, {1}, [2,3], [4,7], …`, the last one ending at
/// `cap`. Degrees above `cap` are counted in the last bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub cap: usize,
}

impl HistogramSpec {
    pub fn new(cap: usize) -> Self {
        HistogramSpec { cap }
    }

    pub fn bins(&self) -> usize {
        self.bin_of(self.cap) + 1
    }

    pub fn bin_of(&self, d: usize) -> usize {
        match d.min(self.cap) {
            0 => 0,
            d => (usize::BITS - d.leading_zeros()) as usize,
        }
    }

    /// Inclusive degree range of bin `i`.
    pub fn range(&self, i: usize) -> (usize, usize) {
        let lo = if i == 0 { 0 } else { 1 << (i - 1) };
        let hi = if i == 0 { 0 } else { (1usize << i) - 1 };
        (lo, hi.min(self.cap))
    }
}

/// Noise-free histogram of `g`'s degrees.
pub fn degree_histogram(g: &Graph, spec: HistogramSpec) -> Vec<f64> {
    let mut h = vec![0.0; spec.bins()];
    for v in 0..g.node_count() {
        h[spec.bin_of(g.degree(v))] += 1.0;
    }
    h
}

/// Per-bin counts plus `Lap((2θ + 1)/ε)`. Bins lying entirely above `θ` are
/// empty for every admissible input and are released as exact zeros.
pub fn degree_histogram_mech(
    g: &Graph,
    theta: usize,
    eps: f64,
    spec: HistogramSpec,
    src: &mut NoiseSource,
) -> Result<TaskResult> {
    if theta < 1 {
        return Err(invalid("θ must be at least 1"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(format!("ε must be positive, got {eps}")));
    }
    if g.max_degree() > theta {
        return Err(Error::Contract(format!(
            "histogram mechanism needs max degree ≤ θ = {theta}, got {}",
            g.max_degree()
        )));
    }
    let start = Instant::now();
    let before = src.draws();
    let b = (2 * theta + 1) as f64 / eps;
    let mut h = degree_histogram(g, spec);
    let mut scales = Vec::new();
    for (i, x) in h.iter_mut().enumerate() {
        if spec.range(i).0 <= theta {
            *x += src.laplace(b)?;
            scales.push(b);
        }
    }
    Ok(TaskResult {
        task: Task::Dd,
        value: TaskValue::Histogram(h),
        charges: vec![Charge { label: "dd/mechanism".into(), eps, delta: 0.0 }],
        noise: NoiseAudit { draws: src.draws() - before, scales },
        clip: None,
        approx: None,
        timings: StepTimings { mechanism_s: start.elapsed().as_secs_f64(), ..StepTimings::default() },
    })
}

/// Node-DP release of `mech`'s statistic: privately estimate a degree bound
/// τ*, clip to it, then run `mech` under group privacy for edge distance 2τ*.
pub fn n2e_run(
    g: &Graph,
    mech: &dyn EdgeDpMechanism,
    p: PrivacyParams,
    split: BudgetSplit,
    src: &mut NoiseSource,
    opts: ApproxOptions<'_>,
) -> Result<TaskResult> {
    split.validate()?;
    if !(p.delta > 0.0) {
        return Err(invalid("node-DP pipeline needs δ > 0"));
    }
    let mut ledger = BudgetLedger::new(p);

    let t0 = Instant::now();
    let approx = node_dp_max_degree_poly(g, split.approximator(p), src, opts)?;
    for c in &approx.charges {
        ledger.charge(&c.label, c.eps, c.delta)?;
    }
    let approx_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let tau = approx.tau_star_int;
    let clip = clip_graph(g, tau)?;
    let clip_s = t1.elapsed().as_secs_f64();

    let share = split.mechanism(p);
    let unit = group_privacy_scale(share, 2 * tau as u64)?;
    let mut res = mech.run(&clip.clipped, unit, MechContext { tau_clip: tau }, src)?;
    let label = format!("{}/mechanism", mech.task().name());
    ledger.charge(&label, share.eps, share.delta)?;

    res.timings = StepTimings { approx_s, clip_s, mechanism_s: res.timings.mechanism_s };
    res.charges = ledger.charges;
    res.clip = Some(clip);
    res.approx = Some(approx);
    Ok(res)
}

/// Pure ε-node-DP degree histogram: τ* as the bound θ, greedy π_θ clipping,
/// then the histogram mechanism on the remaining share. δ is not used.
pub fn n2e_degree_distribution(
    g: &Graph,
    p: PrivacyParams,
    split: BudgetSplit,
    spec: HistogramSpec,
    src: &mut NoiseSource,
    opts: ApproxOptions<'_>,
) -> Result<TaskResult> {
    split.validate()?;
    let pure = PrivacyParams { delta: 0.0, ..p };
    let mut ledger = BudgetLedger::new(pure);

    let t0 = Instant::now();
    let approx = node_dp_max_degree_poly(g, split.approximator(pure), src, opts)?;
    for c in &approx.charges {
        ledger.charge(&c.label, c.eps, c.delta)?;
    }
    let approx_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let theta = approx.tau_star_int;
    let clip = pi_theta_clip(g, theta);
    let clip_s = t1.elapsed().as_secs_f64();

    let share = split.mechanism(pure);
    let mut res = degree_histogram_mech(&clip.clipped, theta, share.eps, spec, src)?;
    ledger.charge("dd/mechanism", share.eps, 0.0)?;

    res.timings = StepTimings { approx_s, clip_s, mechanism_s: res.timings.mechanism_s };
    res.charges = ledger.charges;
    res.clip = Some(clip);
    res.approx = Some(approx);
    Ok(res)
}

/// Smallest power of two that is at least `n` (and at least 1).
pub fn default_n_hat(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Runs `mech` on the unclipped graph with `(ε/N̂, δ/N̂, β)`: group privacy
/// over a node's at most `N̂` incident edges.
pub fn group_privacy_baseline(
    g: &Graph,
    mech: &dyn EdgeDpMechanism,
    p: PrivacyParams,
    n_hat: usize,
    src: &mut NoiseSource,
) -> Result<TaskResult> {
    if n_hat < g.node_count().max(1) {
        return Err(invalid(format!("N̂ = {n_hat} is below the node count {}", g.node_count())));
    }
    let unit = group_privacy_scale(p, n_hat as u64)?;
    let ctx = MechContext { tau_clip: (n_hat - 1).max(1) };
    let mut res = mech.run(g, unit, ctx, src)?;
    res.charges = vec![Charge { label: format!("{}/baseline", mech.task().name()), eps: p.eps, delta: p.delta }];
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(k: usize) -> Graph {
        Graph::from_edges(k + 1, (1..=k).map(|i| (0, i))).unwrap()
    }

    fn cycle(n: usize) -> Graph {
        Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    #[test]
    fn zero_noise_scalars() {
        let mut z = NoiseSource::zero();
        assert_eq!(edge_count_mech(&star(4), 1.0, &mut z).unwrap().value, TaskValue::Scalar(4.0));
        assert_eq!(edge_count_mech(&Graph::empty(3), 1.0, &mut z).unwrap().value, TaskValue::Scalar(0.0));
        assert_eq!(two_path_count_mech(&star(4), 1.0, 4, &mut z).unwrap().value, TaskValue::Scalar(6.0));
        let edge = Graph::from_edges(2, [(0, 1)]).unwrap();
        assert_eq!(two_path_count_mech(&edge, 1.0, 1, &mut z).unwrap().value, TaskValue::Scalar(0.0));
        let path = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(two_path_count_mech(&path, 1.0, 2, &mut z).unwrap().value, TaskValue::Scalar(1.0));
        assert!(matches!(two_path_count_mech(&star(4), 1.0, 3, &mut z), Err(Error::Contract(_))));
        assert_eq!(max_degree_edge_mech(&star(10), 1.0, 0.1, &mut z).unwrap().value, TaskValue::Scalar(1.0));
        assert_eq!(max_degree_edge_mech(&Graph::empty(0), 1.0, 0.1, &mut z).unwrap().value, TaskValue::Scalar(1.0));
    }

    #[test]
    fn histogram_bins() {
        let s = HistogramSpec::new(20);
        assert_eq!(s.bins(), 6);
        let ranges: Vec<_> = (0..s.bins()).map(|i| s.range(i)).collect();
        assert_eq!(ranges, vec![(0, 0), (1, 1), (2, 3), (4, 7), (8, 15), (16, 20)]);
        for d in 0..=20 {
            let (lo, hi) = s.range(s.bin_of(d));
            assert!(lo <= d && d <= hi);
        }
        assert_eq!(s.bin_of(1000), 5);
        assert_eq!(HistogramSpec::new(0).bins(), 1);
    }

    #[test]
    fn histogram_after_pi_theta() {
        let c = pi_theta_clip(&star(3), 2);
        let r = degree_histogram_mech(&c.clipped, 2, 1.0, HistogramSpec::new(3), &mut NoiseSource::zero()).unwrap();
        assert_eq!(r.value, TaskValue::Histogram(vec![1.0, 2.0, 1.0]));
        let r = degree_histogram_mech(&Graph::empty(5), 1, 1.0, HistogramSpec::new(8), &mut NoiseSource::zero()).unwrap();
        assert_eq!(r.value, TaskValue::Histogram(vec![5.0, 0.0, 0.0, 0.0, 0.0]));
        // θ = 1: bins above 1 are structural zeros and draw no noise
        assert_eq!(r.noise.draws, 2);
        assert!(degree_histogram_mech(&star(3), 2, 1.0, HistogramSpec::new(3), &mut NoiseSource::zero()).is_err());
    }

    #[test]
    fn pipeline_zero_noise() {
        let p = PrivacyParams::new(0.8, 2f64.powi(-30), 0.1).unwrap();
        let mut z = NoiseSource::zero();
        let r = n2e_run(&Graph::empty(4), &EdgeCount, p, BudgetSplit::THEORY, &mut z, ApproxOptions::default()).unwrap();
        assert_eq!(r.value, TaskValue::Scalar(0.0));
        let (e, d) = r.consumed();
        assert!((e - 0.8).abs() < 1e-12 && d <= p.delta);

        let r = n2e_run(&star(10), &EdgeCount, p, BudgetSplit::THEORY, &mut z, ApproxOptions::default()).unwrap();
        let a = r.approx.as_ref().unwrap();
        assert_eq!(a.tau_svt, 1);
        assert!((a.q_at_tau + 0.9).abs() < 1e-9);
        assert_eq!(r.value, TaskValue::Scalar(10.0));
        assert_eq!(r.clip.as_ref().unwrap().removed_edges, 0);
    }

    #[test]
    fn degree_distribution_zero_noise() {
        let p = PrivacyParams::new(3.2, 2f64.powi(-30), 0.1).unwrap();
        let spec = HistogramSpec::new(32);
        let r = n2e_degree_distribution(&cycle(20), p, BudgetSplit::EMPIRICAL, spec, &mut NoiseSource::zero(), ApproxOptions::default()).unwrap();
        let h = r.value.histogram().unwrap();
        assert_eq!(h[spec.bin_of(2)], 20.0);
        assert_eq!(h.iter().sum::<f64>(), 20.0);
        let (e, d) = r.consumed();
        assert!((e - 3.2).abs() < 1e-12);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn baseline_scale() {
        let p = PrivacyParams::new(0.8, 2f64.powi(-30), 0.1).unwrap();
        let g = star(5);
        let r = group_privacy_baseline(&g, &EdgeCount, p, 1 << 18, &mut NoiseSource::zero()).unwrap();
        assert_eq!(r.value, TaskValue::Scalar(5.0));
        let r = group_privacy_baseline(&g, &EdgeCount, p, 1 << 18, &mut NoiseSource::seeded(1)).unwrap();
        assert!((r.noise.scales[0] - 327_680.0).abs() < 1e-6);
        assert!(group_privacy_baseline(&g, &EdgeCount, p, 4, &mut NoiseSource::zero()).is_err());
        assert_eq!(default_n_hat(2000), 2048);
        assert_eq!(default_n_hat(0), 1);
    }
}

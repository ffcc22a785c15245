//! Experiment runner: metrics, repeated rounds, trimmed means and output files.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::degree_approx::{ApproxOptions, LpCache};
use crate::dp::{derive_seed, BudgetSplit, NoiseSource, PrivacyParams};
use crate::error::{invalid, Error, Result};
use crate::graph::{generate, load_edge_list_path, Graph, IdPolicy, Model};
use crate::mechanisms::{
    default_n_hat, degree_histogram, group_privacy_baseline, n2e_degree_distribution, n2e_run, HistogramSpec, Task,
    TaskResult,
};

/// `100·|est − truth|/|truth|`.
pub fn relative_error(est: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::UndefinedMetric("relative error against a zero truth".into()));
    }
    Ok(100.0 * (est - truth).abs() / truth.abs())
}

/// Nodes with degree strictly above `est`, or `est − max` when `est`
/// overshoots the maximum degree.
pub fn rank_error(est: f64, degrees: &[usize]) -> f64 {
    let max = degrees.iter().copied().max().unwrap_or(0) as f64;
    if est <= max {
        degrees.iter().filter(|&&d| d as f64 > est).count() as f64
    } else {
        est - max
    }
}

pub fn l1_histogram(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(invalid(format!("histogram layouts differ: {} vs {} bins", est.len(), truth.len())));
    }
    Ok(est.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum())
}

/// L1 error as a percentage of the true total.
pub fn relative_l1(est: &[f64], truth: &[f64]) -> Result<f64> {
    let total: f64 = truth.iter().sum();
    if total == 0.0 {
        return Err(Error::UndefinedMetric("relative L1 against an empty histogram".into()));
    }
    Ok(100.0 * l1_histogram(est, truth)? / total)
}

/// Mean and population standard deviation after dropping the two highest
/// and two lowest values (all values are kept when fewer than five).
pub fn trimmed_mean(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let kept = if v.len() >= 5 { &v[2..v.len() - 2] } else { &v[..] };
    mean_std(kept)
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Percent of the true value.
    RelativeError,
    AbsoluteError,
    RankError,
    /// Rank error as a percent of the true maximum degree.
    RelativeRankError,
    L1,
    /// L1 as a percent of the node count.
    RelativeL1,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Metric> {
        Ok(match s {
            "relative_error" => Metric::RelativeError,
            "absolute_error" => Metric::AbsoluteError,
            "rank_error" => Metric::RankError,
            "relative_rank_error" => Metric::RelativeRankError,
            "l1" => Metric::L1,
            "relative_l1" => Metric::RelativeL1,
            _ => return Err(invalid(format!("unknown metric {s:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::RelativeError => "relative_error",
            Metric::AbsoluteError => "absolute_error",
            Metric::RankError => "rank_error",
            Metric::RelativeRankError => "relative_rank_error",
            Metric::L1 => "l1",
            Metric::RelativeL1 => "relative_l1",
        }
    }

    pub fn default_for(task: Task) -> Metric {
        match task {
            Task::Ec | Task::Tp => Metric::RelativeError,
            Task::Md => Metric::RelativeRankError,
            Task::Dd => Metric::RelativeL1,
        }
    }

    fn scalar_task(self) -> bool {
        !matches!(self, Metric::L1 | Metric::RelativeL1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Path(PathBuf),
    Generated { model: Model, seed: u64 },
}

impl Dataset {
    pub fn name(&self) -> String {
        match self {
            Dataset::Path(p) => p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into()),
            Dataset::Generated { model, seed } => format!("{model}@{seed}"),
        }
    }

    pub fn load(&self) -> Result<Graph> {
        match self {
            Dataset::Path(p) => load_edge_list_path(p, IdPolicy::Remap),
            Dataset::Generated { model, seed } => generate(model, &mut ChaCha8Rng::seed_from_u64(*seed)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    N2e,
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPreset {
    Theory,
    Empirical,
}

impl SplitPreset {
    pub fn parse(s: &str) -> Result<SplitPreset> {
        match s {
            "theory" => Ok(SplitPreset::Theory),
            "empirical" => Ok(SplitPreset::Empirical),
            _ => Err(invalid(format!("unknown split {s:?} (expected theory or empirical)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitPreset::Theory => "theory",
            SplitPreset::Empirical => "empirical",
        }
    }

    pub fn split(self) -> BudgetSplit {
        match self {
            SplitPreset::Theory => BudgetSplit::THEORY,
            SplitPreset::Empirical => BudgetSplit::EMPIRICAL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub task: Task,
    pub method: Method,
    pub eps: f64,
    pub delta: f64,
    pub beta: f64,
    pub split: SplitPreset,
    pub seed: u64,
    pub rounds: usize,
    /// Threads shared by concurrent rounds and LP candidates.
    pub workers: usize,
    /// Drop the two highest and two lowest rounds before averaging.
    pub trim: bool,
    pub metric: Metric,
    /// Public node bound for the baseline and the histogram cap; defaults to
    /// the smallest power of two at least the node count.
    pub n_hat: Option<usize>,
    pub jsonl: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

pub const DEFAULT_DELTA: f64 = 1.0 / (1u64 << 30) as f64;

impl ExperimentConfig {
    /// Defaults for `task`: ε = 0.8 (3.2 for the degree distribution),
    /// δ = 2⁻³⁰, β = 0.1, ten trimmed rounds, empirical split.
    pub fn new(dataset: Dataset, task: Task) -> Self {
        ExperimentConfig {
            dataset,
            task,
            method: Method::N2e,
            eps: if task == Task::Dd { 3.2 } else { 0.8 },
            delta: DEFAULT_DELTA,
            beta: 0.1,
            split: SplitPreset::Empirical,
            seed: 0,
            rounds: 10,
            workers: 1,
            trim: true,
            metric: Metric::default_for(task),
            n_hat: None,
            jsonl: None,
            csv: None,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| v.parse::<f64>().map_err(|e| invalid(format!("{key}: {e}")));
        let int = |v: &str| v.parse::<u64>().map_err(|e| invalid(format!("{key}: {e}")));
        match key {
            "dataset" => self.dataset = Dataset::Path(PathBuf::from(value)),
            "graph" => {
                let seed = match &self.dataset {
                    Dataset::Generated { seed, .. } => *seed,
                    Dataset::Path(_) => 0,
                };
                self.dataset = Dataset::Generated { model: value.parse()?, seed };
            }
            "graph_seed" => match &mut self.dataset {
                Dataset::Generated { seed, .. } => *seed = int(value)?,
                Dataset::Path(_) => return Err(invalid("graph_seed needs a generated graph")),
            },
            "task" => {
                let t = Task::parse(value)?;
                if self.metric == Metric::default_for(self.task) {
                    self.metric = Metric::default_for(t);
                }
                self.task = t;
            }
            "method" => {
                self.method = match value {
                    "n2e" => Method::N2e,
                    "baseline" => Method::Baseline,
                    _ => return Err(invalid(format!("unknown method {value:?}"))),
                }
            }
            "eps" => self.eps = num(value)?,
            "delta" => self.delta = num(value)?,
            "beta" => self.beta = num(value)?,
            "split" => self.split = SplitPreset::parse(value)?,
            "seed" => self.seed = int(value)?,
            "rounds" => self.rounds = int(value)? as usize,
            "workers" => self.workers = int(value)? as usize,
            "trim" => {
                self.trim = value.parse().map_err(|_| invalid(format!("trim: expected true or false, got {value:?}")))?
            }
            "metric" => self.metric = Metric::parse(value)?,
            "n_hat" => self.n_hat = Some(int(value)? as usize),
            "jsonl" => self.jsonl = Some(PathBuf::from(value)),
            "csv" => self.csv = Some(PathBuf::from(value)),
            _ => return Err(invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a flat config: one `key = value` per line, `#` comments.
    /// `task` and `graph`/`dataset` are required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected key = value, got {line:?}") })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get = |k: &str| pairs.iter().rev().find(|(a, _)| a == k).map(|(_, v)| v.clone());
        let task = Task::parse(&get("task").ok_or_else(|| invalid("config is missing `task`"))?)?;
        let dataset = match (get("dataset"), get("graph")) {
            (Some(p), None) => Dataset::Path(PathBuf::from(p)),
            (None, Some(m)) => Dataset::Generated { model: m.parse()?, seed: 0 },
            _ => return Err(invalid("config needs exactly one of `dataset` or `graph`")),
        };
        let mut cfg = ExperimentConfig::new(dataset, task);
        for (k, v) in &pairs {
            if k != "task" && k != "dataset" && k != "graph" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        ExperimentConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        PrivacyParams::new(self.eps, self.delta, self.beta)?;
        if self.rounds == 0 {
            return Err(invalid("rounds must be at least 1"));
        }
        if self.trim && self.rounds < 5 {
            return Err(invalid("the trimmed mean needs at least 5 rounds"));
        }
        if self.metric.scalar_task() == (self.task == Task::Dd) {
            return Err(invalid(format!("metric {} does not apply to task {}", self.metric.name(), self.task.name())));
        }
        if self.method == Method::Baseline && self.task == Task::Dd {
            return Err(invalid("the group-privacy baseline covers the scalar tasks only"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub noise_seed: u64,
    pub metric: Option<f64>,
    pub error: Option<String>,
    pub result: Option<TaskResult>,
    pub time_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub dataset: String,
    pub task: Task,
    pub method: Method,
    pub eps: f64,
    pub delta: f64,
    pub beta: f64,
    pub split: String,
    pub rounds: usize,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub time_s: f64,
    /// Mean per-round wall times of the pipeline steps.
    pub approx_s: f64,
    pub clip_s: f64,
    pub mechanism_s: f64,
    pub truth: f64,
}

pub const CSV_HEADER: &str = "dataset,task,eps,delta,beta,split,rounds,metric,mean,std,time_s,approx_s,clip_s,mechanism_s";

impl Summary {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.dataset,
            self.task.name(),
            self.eps,
            self.delta,
            self.beta,
            self.split,
            self.rounds,
            self.metric.name(),
            self.mean,
            self.std,
            self.time_s,
            self.approx_s,
            self.clip_s,
            self.mechanism_s,
        );
        s
    }
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub summary: Summary,
    pub records: Vec<RoundRecord>,
}

enum Truth {
    Scalar(f64),
    Histogram(Vec<f64>),
}

/// Runs every round, writes the requested outputs and summarizes. Fails if
/// any round fails (failed rounds are still written to the JSON lines file).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let start = Instant::now();
    let g = cfg.dataset.load()?;
    let p = PrivacyParams::new(cfg.eps, cfg.delta, cfg.beta)?;
    let split = cfg.split.split();
    let n_hat = cfg.n_hat.unwrap_or_else(|| default_n_hat(g.node_count()));
    let spec = HistogramSpec::new(n_hat);
    let degrees = g.degrees();
    let truth = match cfg.task {
        Task::Dd => Truth::Histogram(degree_histogram(&g, spec)),
        t => Truth::Scalar(t.mechanism().expect("scalar task").exact(&g)),
    };
    let cache = LpCache::new();
    let concurrent = cfg.workers.clamp(1, cfg.rounds);
    let inner = (cfg.workers / concurrent).max(1);

    let round = |idx: usize| -> RoundRecord {
        let t0 = Instant::now();
        let noise_seed = derive_seed(cfg.seed, idx as u64);
        let mut src = NoiseSource::seeded(noise_seed);
        let opts = ApproxOptions { workers: inner, cache: Some(&cache) };
        let res = match (cfg.task, cfg.method) {
            (Task::Dd, _) => n2e_degree_distribution(&g, p, split, spec, &mut src, opts),
            (t, Method::N2e) => n2e_run(&g, t.mechanism().expect("scalar task"), p, split, &mut src, opts),
            (t, Method::Baseline) => group_privacy_baseline(&g, t.mechanism().expect("scalar task"), p, n_hat, &mut src),
        };
        let scored = res.and_then(|r| {
            let m = score(cfg.metric, &r, &truth, &degrees)?;
            Ok((m, r))
        });
        let time_s = t0.elapsed().as_secs_f64();
        let (metric, error, result) = match scored {
            Ok((m, r)) => (Some(m), None, Some(r)),
            Err(e) => (None, Some(e.to_string()), None),
        };
        RoundRecord { round: idx, noise_seed, metric, error, result, time_s }
    };

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RoundRecord>>> = Mutex::new(vec![None; cfg.rounds]);
    std::thread::scope(|s| {
        for _ in 0..concurrent {
            s.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::SeqCst);
                if r >= cfg.rounds {
                    break;
                }
                let rec = round(r);
                slots.lock().expect("round slots poisoned")[r] = Some(rec);
            });
        }
    });
    let records: Vec<RoundRecord> = slots
        .into_inner()
        .expect("round slots poisoned")
        .into_iter()
        .map(|r| r.expect("every round ran"))
        .collect();

    if let Some(path) = &cfg.jsonl {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    if let Some(r) = records.iter().find(|r| r.error.is_some()) {
        return Err(Error::Contract(format!(
            "round {} failed: {}",
            r.round,
            r.error.as_deref().unwrap_or_default()
        )));
    }

    let values: Vec<f64> = records.iter().filter_map(|r| r.metric).collect();
    let (mean, std) = if cfg.trim { trimmed_mean(&values) } else { mean_std(&values) };
    let step = |f: fn(&TaskResult) -> f64| {
        records.iter().filter_map(|r| r.result.as_ref().map(f)).sum::<f64>() / records.len() as f64
    };
    let summary = Summary {
        dataset: cfg.dataset.name(),
        task: cfg.task,
        method: cfg.method,
        eps: cfg.eps,
        delta: cfg.delta,
        beta: cfg.beta,
        split: match cfg.method {
            Method::N2e => cfg.split.name().to_string(),
            Method::Baseline => "baseline".to_string(),
        },
        rounds: cfg.rounds,
        metric: cfg.metric,
        mean,
        std,
        time_s: start.elapsed().as_secs_f64(),
        approx_s: step(|r| r.timings.approx_s),
        clip_s: step(|r| r.timings.clip_s),
        mechanism_s: step(|r| r.timings.mechanism_s),
        truth: match &truth {
            Truth::Scalar(v) => *v,
            Truth::Histogram(h) => h.iter().sum(),
        },
    };
    if let Some(path) = &cfg.csv {
        append_csv(path, &summary)?;
    }
    Ok(Experiment { summary, records })
}

/// Appends a summary row, writing the header first if the file is new or empty.
pub fn append_csv(path: &Path, s: &Summary) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{CSV_HEADER}")?;
    }
    writeln!(f, "{}", s.csv_row())?;
    Ok(())
}

fn score(metric: Metric, r: &TaskResult, truth: &Truth, degrees: &[usize]) -> Result<f64> {
    match truth {
        Truth::Scalar(t) => {
            let est = r.value.scalar().ok_or_else(|| Error::Contract("expected a scalar result".into()))?;
            let max = degrees.iter().copied().max().unwrap_or(0) as f64;
            match metric {
                Metric::RelativeError => relative_error(est, *t),
                Metric::AbsoluteError => Ok((est - t).abs()),
                Metric::RankError => Ok(rank_error(est, degrees)),
                Metric::RelativeRankError => {
                    if max == 0.0 {
                        return Err(Error::UndefinedMetric("relative rank error on a graph without edges".into()));
                    }
                    Ok(100.0 * rank_error(est, degrees) / max)
                }
                Metric::L1 | Metric::RelativeL1 => Err(invalid("histogram metric on a scalar task")),
            }
        }
        Truth::Histogram(h) => {
            let est = r.value.histogram().ok_or_else(|| Error::Contract("expected a histogram".into()))?;
            match metric {
                Metric::L1 => l1_histogram(est, h),
                Metric::RelativeL1 => relative_l1(est, h),
                _ => Err(invalid("scalar metric on the histogram task")),
            }
        }
    }
}

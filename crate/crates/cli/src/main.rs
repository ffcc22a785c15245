use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use n2e_core::clipping::{clip_graph, pi_theta_clip};
use n2e_core::degree_approx::{edge_dp_max_degree, node_dp_max_degree_exp, node_dp_max_degree_poly, ApproxOptions};
use n2e_core::dp::{NoiseSource, PrivacyParams};
use n2e_core::graph::{generate, Model};
use n2e_core::harness::{run_experiment, Dataset, ExperimentConfig, Metric, SplitPreset, CSV_HEADER, DEFAULT_DELTA};
use n2e_core::mechanisms::Task;
use n2e_core::oracles::{self, Approximator, NeighborKind, Query, SvtFamily};
use n2e_core::{Graph, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "n2e", version, about = "Node-DP graph statistics via edge-DP mechanisms")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run repeated rounds of a task and print a CSV summary.
    Run(RunArgs),
    /// Clip a graph to a degree bound and write the result.
    Clip(ClipArgs),
    /// Privately approximate the maximum degree and print the result as JSON.
    Approx(ApproxArgs),
    /// Run a property check; exits with status 1 on a violation.
    Oracle(OracleArgs),
    /// Generate a synthetic graph as an edge list.
    Gen(GenArgs),
}

#[derive(Args)]
struct Input {
    /// Edge-list file (`u v` per line, `#` comments).
    #[arg(long, conflicts_with = "graph")]
    input: Option<PathBuf>,
    /// Generator: star:K, cycle:N, complete:N, gnp:N:P or pa:N:M.
    #[arg(long)]
    graph: Option<Model>,
    /// Seed for `--graph`.
    #[arg(long, default_value_t = 0)]
    graph_seed: u64,
}

impl Input {
    fn dataset(&self) -> Option<Dataset> {
        match (&self.input, &self.graph) {
            (Some(p), _) => Some(Dataset::Path(p.clone())),
            (None, Some(m)) => Some(Dataset::Generated { model: m.clone(), seed: self.graph_seed }),
            (None, None) => None,
        }
    }

    fn load(&self) -> Result<Graph> {
        self.dataset()
            .ok_or_else(|| n2e_core::Error::InvalidArgument("pass --input or --graph".into()))?
            .load()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Ec,
    Tp,
    Md,
    Dd,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Ec => Task::Ec,
            TaskArg::Tp => Task::Tp,
            TaskArg::Md => Task::Md,
            TaskArg::Dd => Task::Dd,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Privacy budget ε [default: 0.8, or 3.2 for dd].
    #[arg(long)]
    eps: Option<f64>,
    /// δ [default: 2^-30].
    #[arg(long)]
    delta: Option<f64>,
    /// Utility failure probability β [default: 0.1].
    #[arg(long)]
    beta: Option<f64>,
    /// Budget split preset: theory or empirical [default: empirical].
    #[arg(long)]
    split: Option<String>,
    /// `n2e` or the group-privacy `baseline` [default: n2e].
    #[arg(long)]
    method: Option<String>,
    /// relative_error, absolute_error, rank_error, relative_rank_error, l1 or relative_l1.
    #[arg(long)]
    metric: Option<String>,
    /// Base seed; round r uses a seed derived from (seed, r) [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions [default: 10].
    #[arg(long)]
    rounds: Option<usize>,
    /// Threads for concurrent rounds and LP candidates [default: 1].
    #[arg(long)]
    workers: Option<usize>,
    /// Average all rounds instead of dropping the two highest and two lowest.
    #[arg(long)]
    no_trim: bool,
    /// Public node bound for the baseline and the histogram cap.
    #[arg(long)]
    n_hat: Option<usize>,
    /// Write one JSON record per round here.
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Append the summary row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ClipArgs {
    #[command(flatten)]
    input: Input,
    /// Degree bound.
    #[arg(long)]
    tau: usize,
    /// Use greedy endpoint clipping instead of the distance-preserving rule.
    #[arg(long)]
    pi_theta: bool,
    /// Where to write the clipped edge list (stdout if omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Version {
    Poly,
    Exp,
    Edge,
}

#[derive(Args)]
struct ApproxArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "poly")]
    version: Version,
    #[arg(long, default_value_t = 0.8)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Property {
    ClipDistance,
    Sensitivity,
    LpVsExact,
    SaturationBound,
    ExpVsPoly,
    SvtUtility,
    Utility,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_enum)]
    property: Property,
    /// del_deg, del_n_exact or lp_del_n (sensitivity).
    #[arg(long, default_value = "del_deg")]
    query: String,
    /// Neighbour relation for the sensitivity check.
    #[arg(long, value_enum, default_value = "edge")]
    kind: KindArg,
    /// Enumerate every graph up to --max-n nodes instead of sampling.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 12)]
    max_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// Graph for the utility check.
    #[command(flatten)]
    input: Input,
    /// Approximator for the utility check.
    #[arg(long, value_enum, default_value = "poly")]
    version: Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Edge,
    Node,
}

#[derive(Args)]
struct GenArgs {
    /// star:K, cycle:N, complete:N, gnp:N:P or pa:N:M.
    #[arg(long)]
    model: Model,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout if omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => {
            let task = a.task.ok_or_else(|| n2e_core::Error::InvalidArgument("pass --task or --config".into()))?;
            let ds = a
                .input
                .dataset()
                .ok_or_else(|| n2e_core::Error::InvalidArgument("pass --input, --graph or --config".into()))?;
            ExperimentConfig::new(ds, task.into())
        }
    };
    if a.config.is_some() {
        if let Some(ds) = a.input.dataset() {
            cfg.dataset = ds;
        }
        if let Some(t) = a.task {
            cfg.set("task", Task::from(t).name())?;
        }
    }
    if let Some(v) = a.eps {
        cfg.eps = v;
    }
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = &a.split {
        cfg.split = SplitPreset::parse(v)?;
    }
    if let Some(v) = &a.method {
        cfg.set("method", v)?;
    }
    if let Some(v) = &a.metric {
        cfg.metric = Metric::parse(v)?;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if a.no_trim {
        cfg.trim = false;
    }
    if a.n_hat.is_some() {
        cfg.n_hat = a.n_hat;
    }
    if a.jsonl.is_some() {
        cfg.jsonl = a.jsonl;
    }
    if a.csv.is_some() {
        cfg.csv = a.csv;
    }
    let exp = run_experiment(&cfg)?;
    println!("{CSV_HEADER}");
    println!("{}", exp.summary.csv_row());
    Ok(ExitCode::SUCCESS)
}

fn clip(a: ClipArgs) -> Result<ExitCode> {
    let g = a.input.load()?;
    let report = if a.pi_theta { pi_theta_clip(&g, a.tau) } else { clip_graph(&g, a.tau)? };
    report.clipped.write_edge_list(output(&a.output)?)?;
    eprintln!("{}", serde_json::to_string(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn approx(a: ApproxArgs) -> Result<ExitCode> {
    let g = a.input.load()?;
    let p = PrivacyParams::new(a.eps, a.delta, a.beta)?;
    let mut src = NoiseSource::seeded(a.seed);
    match a.version {
        Version::Edge => {
            let start = std::time::Instant::now();
            let tau = edge_dp_max_degree(&g, a.eps, a.beta, &mut src)?;
            print_json(&serde_json::json!({ "tau": tau, "time_s": start.elapsed().as_secs_f64() }))?;
        }
        Version::Exp => print_json(&node_dp_max_degree_exp(&g, p, &mut src)?)?,
        Version::Poly => {
            let opts = ApproxOptions { workers: a.workers, cache: None };
            print_json(&node_dp_max_degree_poly(&g, p, &mut src, opts)?)?
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle(a: OracleArgs) -> Result<ExitCode> {
    let kind = match a.kind {
        KindArg::Edge => NeighborKind::Edge,
        KindArg::Node => NeighborKind::Node,
    };
    let p = PrivacyParams::new(a.eps, a.delta, a.beta)?;
    let report = match a.property {
        Property::ClipDistance => oracles::check_clip_distance(a.trials, a.max_n, a.seed)?,
        Property::Sensitivity => {
            let q = Query::parse(&a.query)?;
            if a.exhaustive {
                oracles::check_query_sensitivity_exhaustive(q, kind, a.max_n)?
            } else {
                oracles::check_query_sensitivity(q, kind, a.trials, a.max_n, a.seed)?
            }
        }
        Property::LpVsExact => {
            if a.exhaustive {
                oracles::check_lp_vs_exact_exhaustive(a.max_n)?
            } else {
                oracles::check_lp_vs_exact(a.trials, a.max_n, a.seed)?
            }
        }
        Property::SaturationBound => oracles::check_saturation_bound_exhaustive(a.max_n)?,
        Property::ExpVsPoly => oracles::check_exp_vs_poly(a.trials, a.max_n, p, a.seed)?,
        Property::SvtUtility => {
            oracles::check_svt_utility(a.eps, a.beta, SvtFamily::Ramp { len: 64, k: 32 }, a.trials, a.seed)?
        }
        Property::Utility => {
            let g = a.input.load()?;
            let v = match a.version {
                Version::Poly => Approximator::Poly,
                Version::Exp => Approximator::Exp,
                Version::Edge => Approximator::Edge,
            };
            oracles::check_approx_utility(v, &g, p, a.trials, a.seed, 1)?
        }
    };
    print_json(&report)?;
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn gen(a: GenArgs) -> Result<ExitCode> {
    let g = generate(&a.model, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    g.write_edge_list(output(&a.output)?)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Clip(a) => clip(a),
        Cmd::Approx(a) => approx(a),
        Cmd::Oracle(a) => oracle(a),
        Cmd::Gen(a) => gen(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

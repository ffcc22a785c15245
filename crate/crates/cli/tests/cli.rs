use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn n2e(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_n2e")).args(args).output().expect("spawn n2e")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_then_clip_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let star = dir.path().join("star.txt");
    let clipped = dir.path().join("clipped.txt");
    assert!(n2e(&["gen", "--model", "star:4", "--output", path(&star)]).status.success());
    assert!(fs::read_to_string(&star).unwrap().contains("0 4"));

    let o = n2e(&["clip", "--input", path(&star), "--tau", "2", "--output", path(&clipped)]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(report["removed_edges"], 2);
    assert_eq!(report["saturated_nodes"], 1);
    let body = fs::read_to_string(&clipped).unwrap();
    let edges: Vec<&str> = body.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(edges, ["0 1", "0 2"]);

    let o = n2e(&["clip", "--graph", "star:4", "--tau", "2", "--pi-theta"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn approx_prints_json() {
    let o = n2e(&["approx", "--graph", "star:10", "--version", "exp", "--seed", "3"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["tau_star_int"].as_u64().unwrap() >= 1);
    assert!(v["tau_svt"].is_u64());

    let a = n2e(&["approx", "--graph", "gnp:40:0.2", "--workers", "1", "--seed", "9"]);
    let b = n2e(&["approx", "--graph", "gnp:40:0.2", "--workers", "4", "--seed", "9"]);
    let strip = |o: &Output| {
        let mut v: serde_json::Value = serde_json::from_str(&stdout(o)).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        v
    };
    assert_eq!(strip(&a), strip(&b));

    let o = n2e(&["approx", "--graph", "star:10", "--version", "edge"]);
    assert!(stdout(&o).contains("\"tau\""));
}

#[test]
fn run_writes_csv_and_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let jsonl = dir.path().join("rounds.jsonl");
    let args = [
        "run", "--graph", "gnp:60:0.1", "--task", "ec", "--rounds", "5", "--seed", "4", "--csv", path(&csv), "--jsonl",
        path(&jsonl),
    ];
    let o = n2e(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert!(lines.next().unwrap().starts_with("dataset,task,eps,delta,beta,split,rounds,metric,mean,std,time_s"));
    assert!(lines.next().unwrap().contains(",ec,0.8,"));
    assert_eq!(fs::read_to_string(&jsonl).unwrap().lines().count(), 5);

    assert!(n2e(&args).status.success());
    let rows: Vec<String> = fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 3, "one header, then one row per run");
    let stable = |r: &str| r.split(',').take(10).collect::<Vec<_>>().join(",");
    assert_eq!(stable(&rows[1]), stable(&rows[2]));
}

#[test]
fn run_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "# small run\ngraph = cycle:30\ntask = dd\nrounds = 5\neps = 2.0\n").unwrap();
    let o = n2e(&["run", "--config", path(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(",dd,2,"));
    let o = n2e(&["run", "--config", path(&cfg), "--eps", "4", "--split", "theory", "--no-trim"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains(",dd,4,"));
    assert!(stdout(&o).contains(",theory,5,"));
}

#[test]
fn oracle_exit_codes() {
    let o = n2e(&["oracle", "--property", "clip-distance", "--trials", "300", "--max-n", "15"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["violations"], 0);
    assert_eq!(v["trials"], 300);

    let o = n2e(&["oracle", "--property", "sensitivity", "--query", "lp_del_n", "--kind", "node", "--exhaustive", "--max-n", "4"]);
    assert_eq!(o.status.code(), Some(0));

    let o = n2e(&["oracle", "--property", "sensitivity", "--query", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_input_is_reported() {
    let o = n2e(&["run", "--graph", "gnp:20:0.2", "--task", "ec", "--delta", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = n2e(&["clip", "--input", "/nonexistent/graph.txt", "--tau", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!n2e(&["gen", "--model", "hexagon:3"]).status.success());
}

#[test]
fn help_lists_every_subcommand() {
    let help = stdout(&n2e(&["--help"]));
    for cmd in ["run", "clip", "approx", "oracle", "gen"] {
        assert!(help.contains(cmd), "missing {cmd}");
    }
    let run_help = stdout(&n2e(&["run", "--help"]));
    for flag in ["--task", "--eps", "--delta", "--beta", "--split", "--seed", "--rounds", "--config"] {
        assert!(run_help.contains(flag), "missing {flag}");
    }
}

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::simplex::{self, Sense, SparseLp};
use super::*;

fn star(k: usize) -> Graph {
    Graph::from_edges(k + 1, (1..=k).map(|i| (0, i))).unwrap()
}

fn complete(n: usize) -> Graph {
    Graph::from_edges(n, (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)))).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut e = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                e.push((u, v));
            }
        }
    }
    Graph::from_edges(n, e).unwrap()
}

/// Same program written out independently for minilp.
fn reference_value(g: &Graph, tau: f64) -> f64 {
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let xs: Vec<_> = (0..g.node_count()).map(|_| pb.add_var(-1.0, (0.0, 1.0))).collect();
    let ys: Vec<_> = g.edges().iter().map(|_| pb.add_var(0.0, (0.0, 1.0))).collect();
    for (i, e) in g.edges().iter().enumerate() {
        pb.add_constraint(&[(ys[i], 1.0), (xs[e.lo], 1.0), (xs[e.hi], 1.0)], ComparisonOp::Ge, 1.0);
    }
    for v in 0..g.node_count() {
        let terms: Vec<_> = g.incident(v).iter().map(|&i| (ys[i], 1.0)).collect();
        if !terms.is_empty() {
            pb.add_constraint(&terms[..], ComparisonOp::Le, tau);
        }
    }
    pb.solve().unwrap().objective()
}

fn assert_feasible(g: &Graph, tau: f64, sol: &LpSolution, tol: f64) {
    for (i, e) in g.edges().iter().enumerate() {
        assert!(sol.y[i] + sol.x[e.lo] + sol.x[e.hi] >= 1.0 - tol, "edge row {i}");
    }
    for v in 0..g.node_count() {
        let load: f64 = g.incident(v).iter().map(|&i| sol.y[i]).sum();
        assert!(load <= tau + tol, "node row {v}: {load} > {tau}");
    }
    for &z in sol.x.iter().chain(&sol.y) {
        assert!((-tol..=1.0 + tol).contains(&z));
    }
}

fn solve_default(g: &Graph, tau: f64) -> LpSolution {
    solve(&build_del_n_lp(g, tau).unwrap(), &SolveOptions::default()).unwrap()
}

#[test]
fn variable_and_constraint_counts() {
    let p = build_del_n_lp(&complete(3), 1.0).unwrap();
    assert_eq!((p.node_vars(), p.edge_vars(), p.constraint_count()), (3, 3, 6));
    let p = build_del_n_lp(&star(4), 2.0).unwrap();
    assert_eq!((p.node_vars(), p.edge_vars(), p.constraint_count()), (5, 4, 9));
    assert!(build_del_n_lp(&star(4), 0.0).is_err());
}

#[test]
fn hand_solved_instances() {
    let s = solve_default(&complete(3), 1.0);
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.objective + 0.75).abs() < 1e-7);
    assert!((s.upper_bound + 0.75).abs() < 1e-7);

    let s = solve_default(&star(4), 2.0);
    assert!((s.objective + 0.5).abs() < 1e-7);
    assert!((s.x[0] - 0.5).abs() < 1e-7);

    for tau in 1..=10 {
        let s = solve_default(&star(10), tau as f64);
        let expect = -((10 - tau) as f64) / 10.0;
        assert!((s.objective - expect).abs() < 1e-7, "τ={tau}: {}", s.objective);
    }

    let s = solve_default(&Graph::empty(4), 1.0);
    assert_eq!((s.objective, s.upper_bound), (0.0, 0.0));
    let g = complete(5);
    assert_eq!(solve_default(&g, 4.0).objective, 0.0);
}

#[test]
fn matches_reference_solver_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..300 {
        let n = rng.gen_range(2..40);
        let p = rng.gen_range(0.05..0.6);
        let g = random_graph(&mut rng, n, p);
        let dmax = g.max_degree().max(1);
        let tau = if trial % 5 == 0 {
            rng.gen_range(0.3..dmax as f64)
        } else {
            rng.gen_range(1..=dmax) as f64
        };
        let sol = solve_default(&g, tau);
        let reference = reference_value(&g, tau);
        assert!(
            (sol.objective - reference).abs() < 1e-6,
            "trial {trial}: ours {} reference {reference}",
            sol.objective
        );
        assert!(sol.objective <= sol.upper_bound + 1e-7);
        assert!((sol.upper_bound - sol.objective).abs() < 1e-6);
        assert_feasible(&g, tau, &sol, 1e-6);
    }
}

#[test]
fn generic_simplex_matches_reference_on_random_boxed_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for _ in 0..300 {
        let n = rng.gen_range(1..12);
        let m = rng.gen_range(1..10);
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for c in cols.iter_mut() {
            for i in 0..m {
                if rng.gen::<f64>() < 0.5 {
                    c.push((i, rng.gen_range(-3.0..3.0)));
                }
            }
        }
        let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..1.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.0..3.0)).collect();
        let cost: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sense: Vec<Sense> = (0..m)
            .map(|_| match rng.gen_range(0..3) {
                0 => Sense::Le,
                1 => Sense::Ge,
                _ => Sense::Eq,
            })
            .collect();
        let rhs: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let mut col_start = vec![0];
        let (mut col_idx, mut col_val) = (Vec::new(), Vec::new());
        for c in &cols {
            for &(i, a) in c {
                col_idx.push(i);
                col_val.push(a);
            }
            col_start.push(col_idx.len());
        }
        let lp = SparseLp {
            n,
            m,
            col_start,
            col_idx,
            col_val,
            cost: cost.clone(),
            lower: lower.clone(),
            upper: upper.clone(),
            start_upper: vec![false; n],
            rhs: rhs.clone(),
            sense: sense.clone(),
        };
        let ours = simplex::solve(&lp, &simplex::Options { stop_above: None, tol: 1e-9, cancel: None }, None)
            .unwrap();

        let mut pb = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..n).map(|j| pb.add_var(cost[j], (lower[j], upper[j]))).collect();
        for i in 0..m {
            let terms: Vec<_> = (0..n)
                .flat_map(|j| cols[j].iter().filter(|t| t.0 == i).map(move |t| (j, t.1)))
                .map(|(j, a)| (vars[j], a))
                .collect();
            let op = match sense[i] {
                Sense::Le => ComparisonOp::Le,
                Sense::Ge => ComparisonOp::Ge,
                Sense::Eq => ComparisonOp::Eq,
            };
            pb.add_constraint(&terms[..], op, rhs[i]);
        }
        match pb.solve() {
            Ok(sol) => {
                assert_eq!(ours.outcome, simplex::Outcome::Optimal);
                assert!(
                    (ours.objective - sol.objective()).abs() < 1e-6,
                    "ours {} reference {}",
                    ours.objective,
                    sol.objective()
                );
                assert!(ours.lower_bound <= ours.objective + 1e-9);
                compared += 1;
            }
            Err(minilp::Error::Infeasible) => {
                assert_eq!(ours.outcome, simplex::Outcome::Infeasible);
            }
            Err(e) => panic!("reference failed: {e}"),
        }
    }
    assert!(compared > 50);
}

#[test]
fn larger_instance_is_solved_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let g = random_graph(&mut rng, 150, 0.08);
    for tau in [2.0, 6.0, 10.0] {
        let sol = solve_default(&g, tau);
        let reference = reference_value(&g, tau);
        assert!((sol.objective - reference).abs() < 1e-6);
        assert_feasible(&g, tau, &sol, 1e-6);
    }
}

#[test]
fn early_stop_is_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut stopped = 0;
    for _ in 0..100 {
        let n = rng.gen_range(20..80);
        let g = random_graph(&mut rng, n, 0.2);
        let tau = rng.gen_range(1..=3) as f64;
        let p = build_del_n_lp(&g, tau).unwrap();
        let full = solve(&p, &SolveOptions::default()).unwrap();
        let level = full.objective * rng.gen_range(0.2..0.9);
        let opts = SolveOptions {
            early_stop_below: Some(level),
            ..SolveOptions::default()
        };
        let early = solve(&p, &opts).unwrap();
        if early.status == LpStatus::EarlyStopped {
            stopped += 1;
            assert!(early.upper_bound < level);
            assert!(full.objective <= early.upper_bound + 1e-9);
            assert!(early.objective <= early.upper_bound);
            assert_feasible(&g, tau, &early, 1e-9);
            assert!(early.iterations <= full.iterations);
        }
    }
    assert!(stopped > 90, "only {stopped} runs stopped early");
}

#[test]
fn positive_level_stops_immediately() {
    let p = build_del_n_lp(&star(5), 1.0).unwrap();
    let s = solve(
        &p,
        &SolveOptions {
            early_stop_below: Some(0.5),
            ..SolveOptions::default()
        },
    )
    .unwrap();
    assert_eq!(s.status, LpStatus::EarlyStopped);
    assert_eq!(s.iterations, 0);
    assert!(s.upper_bound <= 0.0);
}

#[test]
fn cancellation_is_observed() {
    let flag = AtomicBool::new(true);
    let p = build_del_n_lp(&complete(6), 1.0).unwrap();
    let s = solve(
        &p,
        &SolveOptions {
            cancel: Some(&flag),
            ..SolveOptions::default()
        },
    )
    .unwrap();
    assert_eq!(s.status, LpStatus::Cancelled);
}

#[test]
fn rounding() {
    let g = complete(3);
    let s = solve_default(&g, 1.0);
    assert_eq!(round_subgraph(&g, &s), g);

    let g = star(4);
    let s = solve_default(&g, 2.0);
    let r = round_subgraph(&g, &s);
    assert_eq!(r.edge_count(), 0);
    assert_eq!(removed_nodes(&s), vec![0]);

    let zero = LpSolution {
        status: LpStatus::Optimal,
        objective: 0.0,
        upper_bound: 0.0,
        x: vec![0.0; 5],
        y: vec![1.0; 4],
        iterations: 0,
    };
    assert_eq!(round_subgraph(&g, &zero), g);

    let guard = LpSolution {
        x: vec![1.0 / 3.0 + 5e-10, 0.0, 0.0, 0.0, 0.0],
        ..zero
    };
    assert!(removed_nodes(&guard).is_empty());
}

#[test]
fn lp_text_dump() {
    let t = build_del_n_lp(&star(2), 1.0).unwrap().to_lp_format();
    assert!(t.contains("Maximize\n obj: - x0 - x1 - x2\n"));
    assert!(t.contains(" e0_1: y0_1 + x0 + x1 >= 1\n"));
    assert!(t.contains(" n0: y0_1 + y0_2 <= 1\n"));
    assert!(t.contains(" 0 <= y0_2 <= 1\n"));
    assert!(t.ends_with("End\n"));
}

#[test]
fn resumed_solves_reach_the_same_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let n = rng.gen_range(30..90);
        let g = random_graph(&mut rng, n, 0.15);
        let p = build_del_n_lp(&g, 2.0).unwrap();
        let cold = solve(&p, &SolveOptions::default()).unwrap();
        let mut warm = WarmStart::default();
        let mut spent = 0;
        for frac in [0.1, 0.3, 0.6, 0.9] {
            let opts = SolveOptions {
                early_stop_below: Some(cold.objective * frac),
                ..SolveOptions::default()
            };
            let (s, w) = solve_warm(&p, &opts, Some(&warm)).unwrap();
            assert!(cold.objective <= s.upper_bound + 1e-9);
            spent += s.iterations;
            warm = w;
        }
        let (last, _) = solve_warm(&p, &SolveOptions::default(), Some(&warm)).unwrap();
        assert_eq!(last.status, LpStatus::Optimal);
        assert!((last.objective - cold.objective).abs() < 1e-6);
        assert_feasible(&g, 2.0, &last, 1e-6);
        spent += last.iterations;
        assert!(spent <= cold.iterations + cold.iterations / 2 + 20, "{spent} vs {}", cold.iterations);
    }
}

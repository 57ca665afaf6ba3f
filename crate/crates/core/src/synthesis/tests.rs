use serde_json::json;

use super::*;
use crate::error::Error;
use crate::exec::{self, Execution};
use crate::lattice::{Grid, GridFunction};
use crate::problems::{catalog, ProblemSpec};
use crate::solver::{policy_iteration, supersolution_residual};

fn spec(v: serde_json::Value) -> ProblemSpec {
    ProblemSpec::from_json(&v.to_string()).unwrap()
}

fn split_2d(beta1: [&str; 2], sigma: serde_json::Value) -> ProblemSpec {
    spec(json!({
        "class": "drift_control", "n": 2, "m": sigma[0].as_array().unwrap().len(),
        "box": {"lower": [-1.0, -1.0], "upper": [1.0, 1.0], "points": [11, 11]},
        "coefficients": {"beta": [beta1[0], beta1[1]], "sigma": sigma, "g": "0", "rho": "1"},
        "control_set": {"points": [[-1.0], [0.5], [1.0]]},
        "drift_split": {"beta0": ["0", "0"], "beta1": [beta1[0], beta1[1]]}
    }))
}

fn scalar_split(g: &str, beta1: &str, controls: serde_json::Value, sigma: &str) -> ProblemSpec {
    spec(json!({
        "class": "drift_control", "n": 1, "m": 1,
        "box": {"lower": [-1.0], "upper": [1.0], "points": [41]},
        "coefficients": {"beta": [format!("-x1 + {beta1}")], "sigma": [[sigma]], "g": g, "rho": "1"},
        "control_set": controls,
        "drift_split": {"beta0": ["-x1"], "beta1": [beta1]}
    }))
}

fn samples() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0], vec![0.5, -0.3], vec![-0.7, 0.9]]
}

#[test]
fn full_sigma_contains_any_drift_span() {
    let p = split_2d(["a1", "0"], json!([["1", "0"], ["0", "1"]]));
    let r = structure_check(&p, &samples()).unwrap();
    assert!(r.passed);
    assert!(r.entries.iter().all(|e| e.drift_rank == 1 && e.sigma_rank == 2 && e.defect < 1e-12));
}

#[test]
fn orthogonal_drift_violates_structure() {
    let p = split_2d(["0", "a1"], json!([["1"], ["0"]]));
    let r = structure_check(&p, &samples()).unwrap();
    assert!(!r.passed);
    assert!(r.entries.iter().all(|e| !e.contained && (e.defect - 1.0).abs() < 1e-12));
    assert_eq!(r.worst, Some(0));
}

#[test]
fn drift_control_benchmark_satisfies_structure() {
    let (b4, _) = &catalog()[3];
    let pts: Vec<Vec<f64>> = [-1.5, 0.0, 0.7].iter().map(|&x| vec![x]).collect();
    assert!(structure_check(b4, &pts).unwrap().passed);
}

#[test]
fn feedback_follows_gradient_sign() {
    let p = scalar_split("0", "a1", json!({"points": [[-1.0], [1.0]]}), "0.1");
    let v = GridFunction::from_fn(p.grid(), |x| 2.0 * x[0]).unwrap();
    let policy = feedback_map(&v, &p).unwrap();
    assert!(policy.actions().iter().all(|a| *a == Action::Control { index: 1 }));
}

#[test]
fn quadratic_cost_feedback_matches_first_order_condition() {
    let eps = 0.5;
    let p =
        scalar_split("-0.5 * a1^2", "a1", json!({"box": {"lower": [-1.0], "upper": [1.0], "points": [201]}}), "0.1");
    let v = GridFunction::from_fn(p.grid(), |x| 0.4 * x[0] * x[0]).unwrap();
    let policy = feedback_map(&v, &p).unwrap();
    let grid = p.grid();
    for k in (4..grid.node_count() - 4).step_by(3) {
        let x = grid.node(k);
        let Action::Control { index } = policy.action(k) else { panic!("control expected") };
        let a = p.control_set.get(index)[0];
        let d = 0.8 * x[0];
        let want = (d / (2.0 * eps)).clamp(-1.0, 1.0);
        // grid of controls has spacing 0.01, estimator error O(h)
        assert!((a - want).abs() <= 0.01 + 5.0 * grid.max_spacing(), "{a} vs {want} at {x:?}");
    }
}

#[test]
fn tied_hamiltonian_picks_first_control() {
    let p = scalar_split("-x1^2", "0 * a1", json!({"points": [[0.3], [-1.0], [1.0]]}), "0.1");
    let v = GridFunction::from_fn(p.grid(), |x| x[0].sin()).unwrap();
    let policy = feedback_map(&v, &p).unwrap();
    assert!(policy.actions().iter().all(|a| *a == Action::Control { index: 0 }));
}

#[test]
fn feedback_attains_nonlinear_maximum() {
    let (b4, _) = &catalog()[3];
    let b4 = b4.with_points(&[201]).unwrap();
    let sol = policy_iteration(&b4, b4.grid(), 1e-10, 200).unwrap();
    let policy = feedback_map(&sol.value, &b4).unwrap();
    let grid = b4.grid();
    for k in 4..grid.node_count() - 4 {
        let x = grid.node(k);
        let s = drift_span(&b4, &x).unwrap();
        let grad = crate::regularity::projected_gradient(&sol.value, &x, &s, None).unwrap();
        let (best, _) = nonlinear_argmax(&b4, &x, &grad).unwrap();
        let Action::Control { index } = policy.action(k) else { panic!() };
        let a = b4.control_set.get(index);
        let got = b4.reward(&x, a).unwrap() + b4.beta1(&x, a).unwrap().unwrap()[0] * grad[0];
        assert!((got - best).abs() <= 1e-12 * (1.0 + best.abs()));
    }
}

fn constant_problem() -> ProblemSpec {
    spec(json!({
        "class": "drift_control", "n": 1, "m": 1,
        "box": {"lower": [-1.0], "upper": [1.0], "points": [21]},
        "coefficients": {"beta": ["0"], "sigma": [["0"]], "g": "c", "rho": "r"},
        "constants": {"c": 1.5, "r": 0.4}
    }))
}

fn params(n_paths: usize, dt: f64, t_max: f64, seed: u64) -> SimulationParams {
    SimulationParams { n_paths, dt, t_max, tail_tol: 0.5, seed }
}

#[test]
fn constant_rate_integral_is_exact() {
    let p = constant_problem();
    let policy = FeedbackPolicy::uniform(p.grid(), Action::Control { index: 0 });
    let est = simulate(&p, &policy, &[0.2], &params(16, 0.01, 5.0, 3), Execution::Sequential).unwrap();
    let want = 1.5 * (1.0 - (-0.4f64 * 5.0).exp()) / 0.4;
    assert!((est.mean - want).abs() < 1e-12, "{} vs {want}", est.mean);
    assert_eq!(est.stderr, 0.0);
    assert_eq!(est.absorbed_paths, 0);
}

#[test]
fn immediate_stop_pays_obstacle() {
    let (b1, _) = &catalog()[0];
    let policy = FeedbackPolicy::uniform(b1.grid(), Action::Stop);
    let est = simulate(
        b1,
        &policy,
        &[0.3],
        &SimulationParams { n_paths: 8, dt: 0.01, t_max: 400.0, tail_tol: 1e-6, seed: 1 },
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(est.mean, b1.obstacle_at(&[0.3]).unwrap().unwrap());
    assert_eq!(est.stopped_paths, 8);
}

#[test]
fn invalid_simulation_inputs() {
    let p = constant_problem();
    let policy = FeedbackPolicy::uniform(p.grid(), Action::Control { index: 0 });
    let bad_dt = simulate(&p, &policy, &[0.0], &params(4, 0.0, 1.0, 0), Execution::Sequential);
    assert!(matches!(bad_dt, Err(Error::InvalidArgument(_))));
    let no_paths = simulate(&p, &policy, &[0.0], &params(0, 0.1, 1.0, 0), Execution::Sequential);
    assert!(matches!(no_paths, Err(Error::InvalidArgument(_))));
    let short = SimulationParams { tail_tol: 1e-6, ..params(4, 0.1, 1.0, 0) };
    assert!(matches!(simulate(&p, &policy, &[0.0], &short, Execution::Sequential), Err(Error::TailTolerance { .. })));
}

fn ou_problem() -> ProblemSpec {
    scalar_split("-x1^2", "a1", json!({"points": [[0.0]]}), "0.3")
}

#[test]
fn simulation_is_deterministic_across_threads() {
    let p = ou_problem();
    let policy = FeedbackPolicy::uniform(p.grid(), Action::Control { index: 0 });
    let pr = SimulationParams { n_paths: 300, dt: 0.01, t_max: 15.0, tail_tol: 1e-6, seed: 42 };
    let one = exec::with_threads(1, || simulate(&p, &policy, &[0.5], &pr, Execution::Parallel).unwrap());
    let four = exec::with_threads(4, || simulate(&p, &policy, &[0.5], &pr, Execution::Parallel).unwrap());
    let seq = simulate(&p, &policy, &[0.5], &pr, Execution::Sequential).unwrap();
    assert_eq!(one.mean.to_bits(), four.mean.to_bits());
    assert_eq!(one, seq);
}

#[test]
fn disjoint_seeds_agree_within_three_standard_errors() {
    let p = ou_problem();
    let policy = FeedbackPolicy::uniform(p.grid(), Action::Control { index: 0 });
    let run = |seed| {
        let pr = SimulationParams { n_paths: 2000, dt: 0.02, t_max: 15.0, tail_tol: 1e-6, seed };
        simulate(&p, &policy, &[0.5], &pr, Execution::Parallel).unwrap()
    };
    let (a, b) = (run(1), run(2));
    let combined = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    assert!((a.mean - b.mean).abs() <= 3.0 * combined, "{} {} {}", a.mean, b.mean, combined);
}

#[test]
fn deterministic_gap_is_integration_error_only() {
    // sigma = 0, a = 0: X_t = x0 e^{-t}, payoff -x0^2 / 3
    let p = scalar_split("-x1^2", "a1", json!({"points": [[0.0]]}), "0");
    let policy = FeedbackPolicy::uniform(p.grid(), Action::Control { index: 0 });
    let v = GridFunction::from_fn(p.grid(), |x| -x[0] * x[0] / 3.0).unwrap();
    let pr = SimulationParams { n_paths: 4, dt: 0.001, t_max: 20.0, tail_tol: 1e-8, seed: 0 };
    let r = verification_gap(&v, &p, &policy, &[vec![0.8]], &pr, 0.0, Execution::Sequential).unwrap();
    let e = &r.entries[0];
    assert_eq!(e.estimate.stderr, 0.0);
    assert!(e.gap.abs() < 2e-3, "{}", e.gap);
}

#[test]
fn singleton_control_freezes_to_itself() {
    let p = scalar_split("-x1^2", "a1", json!({"points": [[0.2]]}), "0.3");
    let sol = policy_iteration(&p, p.grid(), 1e-12, 50).unwrap();
    let f = freeze_and_resolve(&sol.value, &p, Execution::Sequential).unwrap();
    assert!(f.sup_gap <= 1e-10, "{}", f.sup_gap);
}

#[test]
fn perturbed_value_is_detected() {
    let (b4, _) = &catalog()[3];
    let b4 = b4.with_points(&[201]).unwrap();
    let sol = policy_iteration(&b4, b4.grid(), 1e-10, 200).unwrap();
    let clean = freeze_and_resolve(&sol.value, &b4, Execution::Sequential).unwrap();
    assert!(clean.sup_gap <= 1e-9, "{}", clean.sup_gap);
    let noisy: Vec<f64> =
        sol.value.values().iter().enumerate().map(|(k, v)| v + 1e-2 * ((k * 7919) % 13) as f64 / 13.0).collect();
    let noisy = GridFunction::new(b4.grid().clone(), noisy).unwrap();
    let f = freeze_and_resolve(&noisy, &b4, Execution::Sequential).unwrap();
    assert!(f.sup_gap > 1e-3, "{}", f.sup_gap);
    // the residual of the frozen solve itself is at solver precision
    let res = supersolution_residual(&sol.value, &b4, Execution::Sequential).unwrap();
    assert!(res.interior_min() > -1e-9);
}

#[test]
fn split_is_required() {
    let p = constant_problem();
    let v = GridFunction::constant(p.grid(), 0.0);
    assert!(matches!(feedback_map(&v, &p), Err(Error::InvalidProblem(_))));
    assert!(matches!(freeze_and_resolve(&v, &p, Execution::Sequential), Err(Error::InvalidProblem(_))));
    let small = Grid::new(&[0.0], &[1.0], &[5]).unwrap();
    let q = ou_problem();
    let v = GridFunction::constant(&small, 0.0);
    assert!(matches!(feedback_map(&v, &q), Err(Error::DimensionMismatch(_)) | Err(Error::InvalidArgument(_))));
}

use nalgebra::DMatrix;
use serde_json::json;

use super::*;
use crate::problems::catalog;

fn spec(v: serde_json::Value) -> ProblemSpec {
    ProblemSpec::from_json(&v.to_string()).unwrap()
}

fn scalar(class: &str, beta: &str, sigma: &str, g: &str, rho: &str, points: usize) -> serde_json::Value {
    json!({
        "class": class, "n": 1, "m": 1,
        "box": {"lower": [0.0], "upper": [1.0], "points": [points]},
        "coefficients": {"beta": [beta], "sigma": [[sigma]], "g": g, "rho": rho}
    })
}

fn row_of(gen: &DiscreteGenerator, k: usize) -> Vec<(usize, f64)> {
    let mut r: Vec<(usize, f64)> = gen.off_diagonal(k).collect();
    r.push((k, gen.diag(k)));
    r.sort_by_key(|e| e.0);
    r
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn unit_diffusion_gives_central_second_difference() {
    let p = spec(scalar("drift_control", "0", "pow(2, 0.5)", "0", "0", 5));
    let gen = discretize(&p, p.grid(), 0, Execution::Sequential).unwrap();
    let h2 = 0.25f64 * 0.25;
    let row = row_of(&gen, 2);
    let want = [(1, 1.0 / h2), (2, -2.0 / h2), (3, 1.0 / h2)];
    assert_eq!(row.len(), 3);
    for ((c, w), (wc, ww)) in row.iter().zip(want) {
        assert_eq!(*c, wc);
        assert!(close(*w, ww, 1e-12));
    }
}

#[test]
fn positive_drift_is_forward_differenced() {
    let p = spec(scalar("drift_control", "1", "0", "0", "0", 5));
    let gen = discretize(&p, p.grid(), 0, Execution::Sequential).unwrap();
    for k in 1..4 {
        let row = row_of(&gen, k);
        assert_eq!(row, vec![(k, -4.0), (k + 1, 4.0)]);
    }
}

#[test]
fn constants_map_to_minus_rho_everywhere() {
    let p = spec(json!({
        "class": "drift_control", "n": 2, "m": 2,
        "box": {"lower": [-1.0, 0.0], "upper": [1.0, 2.0], "points": [9, 11]},
        "coefficients": {
            "beta": ["x1 - a1", "-x2"],
            "sigma": [["1", "0.3"], ["0.2", "0.8"]],
            "g": "0", "rho": "1 + x1^2"
        },
        "control_set": {"points": [[-1.0], [0.5]]}
    }));
    for c in 0..2 {
        let gen = discretize(&p, p.grid(), c, Execution::Sequential).unwrap();
        let ones = vec![1.0; gen.len()];
        for (k, v) in gen.apply(&ones).into_iter().enumerate() {
            let x = p.grid().node(k);
            assert!((v + 1.0 + x[0] * x[0]).abs() < 1e-10, "node {k}: {v}");
        }
        let (_, worst) = gen.worst_interior_weight().unwrap();
        assert!(worst >= 0.0);
    }
}

#[test]
fn cross_dominated_diffusion_is_rejected() {
    let p = spec(json!({
        "class": "drift_control", "n": 2, "m": 2,
        "box": {"lower": [0.0, 0.0], "upper": [1.0, 0.1], "points": [11, 11]},
        "coefficients": {
            "beta": ["0", "0"],
            "sigma": [["1", "0"], ["0.99", "0.1"]],
            "g": "0", "rho": "1"
        }
    }));
    match discretize(&p, p.grid(), 0, Execution::Sequential) {
        Err(Error::Monotonicity { weight, cross, .. }) => {
            assert!(weight < 0.0);
            assert!((cross - 0.99).abs() < 1e-12);
        }
        other => panic!("expected a monotonicity error, got {other:?}"),
    }
}

#[test]
fn constant_equation_has_exact_solution() {
    let p = spec(scalar("drift_control", "0", "0", "3", "1.5", 21));
    let s = policy_iteration(&p, p.grid(), 1e-10, 10).unwrap();
    assert!(s.value.values().iter().all(|v| (v - 2.0).abs() < 1e-14));
    assert_eq!(s.report.residual, 0.0);
}

#[test]
fn rho_min_violation_is_reported() {
    let mut v = scalar("drift_control", "0", "0.1", "1", "x1", 11);
    assert!(matches!(
        policy_iteration(&spec(v.clone()), spec(v.clone()).grid(), 1e-8, 10),
        Err(Error::RhoMin { node: 0, .. })
    ));
    v["coefficients"]["rho"] = json!("0.5");
    v["rho_min"] = json!(0.6);
    let p = spec(v);
    assert!(matches!(policy_iteration(&p, p.grid(), 1e-8, 10), Err(Error::RhoMin { .. })));
}

#[test]
fn invalid_settings_are_rejected() {
    let p = spec(scalar("drift_control", "0", "0", "1", "1", 5));
    assert!(matches!(policy_iteration(&p, p.grid(), -1.0, 10), Err(Error::InvalidArgument(_))));
    assert!(matches!(policy_iteration(&p, p.grid(), 1e-8, 0), Err(Error::InvalidArgument(_))));
}

fn stopping(obstacle: &str) -> ProblemSpec {
    let mut v = scalar("optimal_stopping", "0.1", "0.3", "0", "0.5", 41);
    v["obstacle"] = json!(obstacle);
    spec(v)
}

#[test]
fn zero_obstacle_stops_immediately() {
    let p = stopping("0");
    let s = solve_obstacle(&p, p.grid(), 1e-10, 50).unwrap();
    assert!(s.value.values().iter().all(|v| v.abs() < 1e-12));
    assert!(s.region.iter().all(|&r| r));
    assert!(s.policy.actions().iter().all(|a| *a == Action::Stop));
}

#[test]
fn dominant_obstacle_is_the_value() {
    let p = stopping("100 + x1");
    let s = solve_obstacle(&p, p.grid(), 1e-10, 50).unwrap();
    for (k, v) in s.value.values().iter().enumerate() {
        assert!((v - 100.0 - p.grid().node(k)[0]).abs() < 1e-10);
    }
    assert!(s.region.iter().all(|&r| r));
}

#[test]
fn obstacle_solution_satisfies_complementarity() {
    let p = stopping("pos(0.5 - x1) + 0.2 * x1^2");
    let tol = 1e-9;
    let s = solve_obstacle(&p, p.grid(), tol, 50).unwrap();
    let bank = GeneratorBank::build(&p, p.grid(), Execution::Sequential).unwrap();
    let psi = obstacle_field(&p, p.grid(), Execution::Sequential).unwrap();
    let v = s.value.values();
    for k in 1..v.len() - 1 {
        let lv = bank.value(0, k, v);
        assert!(v[k] >= psi[k] - tol);
        assert!(-lv >= -tol);
        assert!((-lv).min(v[k] - psi[k]) <= tol);
    }
    let res = supersolution_residual(&s.value, &p, Execution::Sequential).unwrap();
    assert!(res.certifies(tol));
    assert_eq!(res.certificate, CERTIFICATE);
}

#[test]
fn intervention_operator_examples() {
    let g = Grid::new(&[-1.0], &[1.0], &[21]).unwrap();
    let zero = GridFunction::constant(&g, 0.0);
    let m = intervention_operator(&zero, 1.0, 0.5).unwrap();
    assert!(m.values().iter().all(|v| (v + 0.5).abs() < 1e-15));

    let affine = GridFunction::from_fn(&g, |x| 0.5 * x[0] + 2.0).unwrap();
    let t = intervention_targets(&affine, 1.0, 0.5, Execution::Sequential).unwrap();
    for (k, (m, y)) in t.iter().enumerate() {
        assert_eq!(*y, k);
        assert!((m - (affine.values()[k] - 0.5)).abs() < 1e-15);
    }

    let abs = GridFunction::from_fn(&g, |x| x[0].abs()).unwrap();
    let m = intervention_operator(&abs, 0.5, 0.1).unwrap();
    // brute force over nodes at x = 0: max_y |y| - 0.5 |y| - 0.1
    let brute = (0..21).map(|k| g.node(k)[0].abs() * 0.5 - 0.1).fold(f64::NEG_INFINITY, f64::max);
    assert!((m.values()[10] - brute).abs() < 1e-15);
    assert!((m.values()[10] - 0.4).abs() < 1e-12);

    assert!(intervention_operator(&abs, 0.0, 0.1).is_err());
}

fn impulse(g: &str, c1: f64) -> ProblemSpec {
    let mut v = scalar("impulse_control", "-x1", "0.3", g, "1", 61);
    v["box"] = json!({"lower": [-3.0], "upper": [3.0], "points": [61]});
    v["impulse_costs"] = json!({"c0": 0.1, "c1": c1});
    spec(v)
}

#[test]
fn prohibitive_fixed_cost_reduces_to_linear_solve() {
    let p = impulse("-x1^2", 1e6);
    let s = solve_impulse_qvi(&p, p.grid(), 1e-10, 50).unwrap();
    assert!(s.region.iter().all(|&r| !r));
    let bank = GeneratorBank::build(&p, p.grid(), Execution::Sequential).unwrap();
    let system = HowardSystem { bank: &bank, obstacle: None };
    let linear = system.evaluate(&vec![0; p.grid().node_count()], system.bandwidth()).unwrap();
    for (a, b) in s.value.values().iter().zip(&linear) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn zero_reward_makes_interventions_pure_cost() {
    let p = impulse("0", 0.05);
    let s = solve_impulse_qvi(&p, p.grid(), 1e-10, 50).unwrap();
    assert!(s.value.values().iter().all(|v| v.abs() < 1e-12));
    let m = intervention_operator(&s.value, 0.1, 0.05).unwrap();
    for (v, mv) in s.value.values().iter().zip(m.values()) {
        assert!((v - mv - 0.05).abs() < 1e-12);
    }
}

#[test]
fn shifting_value_raises_residual_by_rho_times_shift() {
    let p = stopping("pos(0.5 - x1)");
    let s = solve_obstacle(&p, p.grid(), 1e-10, 50).unwrap();
    let base = supersolution_residual(&s.value, &p, Execution::Sequential).unwrap();
    let c = 0.3;
    let shifted = GridFunction::from_fn(p.grid(), |x| s.value.interpolate(x).unwrap() + c).unwrap();
    let up = supersolution_residual(&shifted, &p, Execution::Sequential).unwrap();
    for k in 0..base.values.len() {
        assert!(up.values[k] - base.values[k] >= 0.5 * c - 1e-9);
    }
}

#[test]
fn residual_matches_hamiltonian_of_discrete_derivatives() {
    // drift control without a split so that every control row upwinds its own
    // total drift, which is what eval_H sees
    let v = json!({
        "class": "drift_control", "n": 1, "m": 1,
        "box": {"lower": [-1.0], "upper": [1.0], "points": [201]},
        "coefficients": {"beta": ["-x1 + a1"], "sigma": [["0.2"]], "g": "-x1^2 - 0.5 * a1^2", "rho": "1"},
        "control_set": {"box": {"lower": [-1.0], "upper": [1.0], "points": [11]}}
    });
    let p = spec(v);
    let s = policy_iteration(&p, p.grid(), 1e-10, 50).unwrap();
    let bank = GeneratorBank::build(&p, p.grid(), Execution::Sequential).unwrap();
    let u = s.value.values();
    let h = p.grid().spacing()[0];
    for k in 1..u.len() - 1 {
        let x = p.grid().node(k);
        let hess = DMatrix::from_element(1, 1, (u[k + 1] - 2.0 * u[k] + u[k - 1]) / (h * h));
        let mut best = f64::NEG_INFINITY;
        for a in p.control_set.iter() {
            let b = p.beta(&x, a).unwrap()[0];
            let d = if b > 0.0 { (u[k + 1] - u[k]) / h } else { (u[k] - u[k - 1]) / h };
            best = best.max(p.eval_l(a, &x, u[k], &[d], &hess).unwrap());
        }
        let (scheme, c) = bank.best(k, u);
        assert!((best - scheme).abs() < 1e-9, "node {k}: {best} vs {scheme}");
        assert!(best.abs() <= 1e-10 * 1e3);
        match s.policy.action(k) {
            Action::Control { index } => assert_eq!(index, c),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn far_field_rate_matches_power_law_decay() {
    // for 1/2 s^2 x^2 V'' = rho V the decaying solution is x^b with the
    // negative root b, so the log-derivative at the face is b / x
    let (b1, _) = &catalog()[0];
    let g = b1.grid();
    let x = g.node(g.node_count() - 1);
    let kappa = generator::far_field_coefficient(b1, g, &x, &[], 0, 1.0).unwrap();
    let b = crate::problems::catalog::negative_root(0.0, 0.2, 0.05);
    let exact = 0.05 / (b / x[0]);
    assert!((kappa - exact).abs() < 5e-3 * exact.abs(), "{kappa} vs {exact}");
}

#[test]
fn report_serialises_without_wall_time() {
    let p = stopping("pos(0.5 - x1)");
    let s = solve_obstacle(&p, p.grid(), 1e-10, 50).unwrap();
    let text = serde_json::to_string(&s.report).unwrap();
    assert!(text.contains("\"ordering\""));
    assert!(text.contains("\"policy_changes\""));
    assert!(!text.contains("wall"));
    assert!(s.report.converged);
}

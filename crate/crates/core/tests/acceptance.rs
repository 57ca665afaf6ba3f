use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smoothfit::problems::{catalog, BenchmarkOracle, OracleKind, ProblemSpec};
use smoothfit::regularity::{
    check_value_bounds, fit_bound_constant, gradient_continuity, kink_witness, probe_sweep, range_basis,
    smooth_fit_check, Classification, DirectionKind, Region, WitnessOperator, DEFAULT_TAU_RANK,
};
use smoothfit::solver::{intervention_operator, solve, supersolution_residual, SolveSettings};
use smoothfit::synthesis::{
    calibrate_allowance, feedback_map, freeze_and_resolve, verification_gap, Action, FeedbackPolicy, SimulationParams,
};
use smoothfit::Execution;

// Writes bypass the test harness capture so the verdicts always show.
fn verdict(id: usize, pass: bool, detail: String) -> bool {
    let line = format!("criterion {id:>2}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}

fn solved(p: &ProblemSpec, tol: f64) -> smoothfit::solver::Solution {
    let s = SolveSettings { tol, ..SolveSettings::default() };
    solve(p, p.grid(), &s).unwrap().require_converged().unwrap()
}

fn perpetual_put(oracle: &BenchmarkOracle) -> f64 {
    match oracle.kind {
        OracleKind::PerpetualPut { boundary, .. } => boundary,
        _ => panic!("B1 carries a closed-form oracle"),
    }
}

fn put_oracle(cat: &[(ProblemSpec, BenchmarkOracle)]) -> bool {
    let (p, oracle) = &cat[0];
    let t = Instant::now();
    let sol = solved(p, 1e-8);
    let g = p.grid();
    let b_star = perpetual_put(oracle);
    let v = sol.value.values();
    let last_stop = (0..g.node_count()).filter(|&k| sol.region[k]).max().unwrap();
    let b_num = 0.5 * (g.coordinate(0, last_stop) + g.coordinate(0, last_stop + 1));
    let b_err = (b_num - b_star).abs() / b_star;
    let (lo, hi) = (g.lower()[0], g.upper()[0]);
    let quarter = 0.25 * (hi - lo);
    let v_err = (0..g.node_count())
        .filter(|&k| (lo + quarter..=hi - quarter).contains(&g.coordinate(0, k)))
        .map(|k| (v[k] - oracle.value(&g.node(k)).unwrap()).abs())
        .fold(0.0, f64::max);
    let h = g.max_spacing();
    let fit =
        smooth_fit_check(&sol.value, p, &sol.region, |x| range_basis(p, x, DEFAULT_TAU_RANK), 1e-6, 5.0 * h).unwrap();
    let gap = fit.reports.iter().flat_map(|r| &r.directions).filter_map(|d| d.gap).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass =
        b_err <= 0.01 && v_err <= 2e-3 && !fit.reports.is_empty() && fit.passed() && gap <= 5.0 * h && secs <= 60.0;
    verdict(
        1,
        pass,
        format!(
            "free boundary {b_num:.5} vs {b_star:.5} (rel {b_err:.1e}); inner-half |V - oracle| {v_err:.1e}; smooth-fit gap {gap:.1e} <= {:.1e}; {secs:.2}s",
            5.0 * h
        ),
    )
}

fn range_probes(cat: &[(ProblemSpec, BenchmarkOracle)]) -> bool {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut violations = 0;
    for (p, o) in cat.iter().take(4) {
        let sol = solved(p, 1e-8);
        let sweep = probe_sweep(&sol.value, p, 15, DEFAULT_TAU_RANK, None, 0, Execution::Parallel).unwrap();
        violations += sweep.range_violations;
        parts.push(format!("{} {}/{}", o.name, sweep.range_probes - sweep.range_violations, sweep.range_probes));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        2,
        violations == 0 && secs <= 300.0,
        format!("smooth range probes {}; {violations} violations; {secs:.1}s", parts.join(", ")),
    )
}

fn sharpness(cat: &[(ProblemSpec, BenchmarkOracle)]) -> bool {
    let (p, oracle) = &cat[2];
    let kink = match oracle.kind {
        OracleKind::SlicedPerpetualPut { kink, .. } => kink,
        _ => panic!("B3 carries a sliced oracle"),
    };
    let sol = solved(p, 1e-8);
    let h2 = p.grid().spacing()[1];
    let sweep = probe_sweep(&sol.value, p, 15, DEFAULT_TAU_RANK, None, 0, Execution::Parallel).unwrap();
    let on_kink: Vec<_> = sweep.reports.iter().filter(|r| (r.x[1] - kink).abs() < 0.5 * h2).collect();
    let kernel: Vec<_> = on_kink.iter().filter(|r| r.kind == DirectionKind::Kernel).collect();
    let range: Vec<_> = on_kink.iter().filter(|r| r.kind != DirectionKind::Kernel).collect();
    let min_ratio =
        kernel.iter().map(|r| r.jump.unwrap().abs() / r.derivative_scale().max(1e-300)).fold(f64::INFINITY, f64::min);
    let kinks = kernel.iter().filter(|r| r.classification == Classification::Kink).count();
    let smooth = range.iter().all(|r| r.classification == Classification::Smooth);
    verdict(
        3,
        !kernel.is_empty() && min_ratio >= 0.3 && smooth,
        format!(
            "{} probes on x2 = {kink}: min e2 jump / scale {min_ratio:.2}, {kinks} classified kink; e1 smooth at all: {smooth}",
            kernel.len()
        ),
    )
}

fn witnesses() -> bool {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let j_list = [1, 10, 100, 1000];
    let mut worst_identity = 0.0f64;
    let mut worst_slope = 0.0f64;
    let mut increasing = true;
    for _ in 0..20 {
        let (n, m) = (3, 2);
        let p1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let kappa = rng.random_range(0.0..2.0);
        let op = WitnessOperator {
            drift: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            reward: rng.random_range(-1.0..1.0),
            rho: rng.random_range(0.1..1.0),
            value: rng.random_range(-1.0..1.0),
        };
        let w = kink_witness(&p1, &p2, kappa, &s, "a", &j_list, &op).unwrap();
        worst_identity = w.trace_error.iter().chain(&w.gradient_error).fold(worst_identity, |a, &e| a.max(e));
        worst_slope = worst_slope.max(w.slope_consistency);
        increasing &= w.residual_increasing;
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        4,
        worst_identity <= 1e-10 && worst_slope <= 1e-8 && increasing && secs <= 5.0,
        format!("20 instances: identity error {worst_identity:.1e}, slope consistency {worst_slope:.1e}, increasing {increasing}; {secs:.3}s"),
    )
}

fn continuity_ladder(cat: &[(ProblemSpec, BenchmarkOracle)]) -> bool {
    let (p, oracle) = &cat[0];
    let sol = solved(p, 1e-8);
    let b_star = perpetual_put(oracle);
    let region = Region::new(vec![b_star + 0.25], vec![3.0]).unwrap();
    let deltas = [0.2, 0.1, 0.05, 0.025];
    let c = gradient_continuity(&sol.value, &region, |x| range_basis(p, x, DEFAULT_TAU_RANK), &deltas, 400, 5).unwrap();
    let m: Vec<String> = c.modulus.iter().map(|x| format!("{x:.3e}")).collect();
    verdict(5, c.decreasing, format!("modulus over {deltas:?}: [{}], noise floor {:.1e}", m.join(", "), c.noise_floor))
}

fn value_bounds(cat: &[(ProblemSpec, BenchmarkOracle)]) -> bool {
    let p = &cat[1].0;
    let sol = solved(p, 1e-8);
    let m = fit_bound_constant(&sol.value, 2.0, 10_000, 1, 1.25).unwrap();
    let r = check_value_bounds(&sol.value, m, 2.0, 10_000, 2).unwrap();
    verdict(
        6,
        r.passed(),
        format!(
            "M = {m:.4}, worst margins growth {:.3e}, lipschitz {:.3e}, semiconvexity {:.3e}",
            r.growth.worst_margin, r.lipschitz.worst_margin, r.semiconvexity.worst_margin
        ),
    )
}

fn qvi_properties(cat: &[(ProblemSpec, BenchmarkOracle)]) -> bool {
    let p = &cat[4].0;
    let tol = 1e-8;
    let sol = solved(p, tol);
    let costs = p.impulse_costs.unwrap();
    let mv = intervention_operator(&sol.value, costs.c0, costs.c1).unwrap();
    let above = sol.value.values().iter().zip(mv.values()).map(|(v, m)| v - m).fold(f64::INFINITY, f64::min);
    let residual = supersolution_residual(&sol.value, p, Execution::Parallel).unwrap();
    let outer = sol.report.outer.clone().unwrap();
    verdict(
        7,
        above >= -tol && residual.certifies(tol) && outer.non_increasing,
        format!(
            "min(V - MV) {above:.2e}, min(-LV - g) {:.2e}, {} outer iterates non-increasing {} (max increase {:.1e})",
            residual.interior_min(),
            outer.iterations,
            outer.non_increasing,
            outer.max_increase
        ),
    )
}

fn verification(cat: &[(ProblemSpec, BenchmarkOracle)]) -> bool {
    let p = &cat[3].0;
    let x0: Vec<Vec<f64>> = [-1.5, -0.75, 0.0, 0.5, 1.25].iter().map(|&x| vec![x]).collect();
    let points = p.grid().points()[0];
    let (dt, h) = (0.01, p.grid().max_spacing());
    let mut reports = Vec::new();
    let mut coarse = None;
    for (pts, step) in [(points, dt), (2 * points - 1, 0.5 * dt)] {
        let q = p.with_points(&[pts]).unwrap();
        let sol = solved(&q, 1e-8);
        let policy = feedback_map(&sol.value, &q).unwrap();
        let params = SimulationParams { n_paths: 4000, dt: step, t_max: 14.0, tail_tol: 1e-6, seed: 7 };
        reports.push(verification_gap(&sol.value, &q, &policy, &x0, &params, 0.0, Execution::Parallel).unwrap());
        if coarse.is_none() {
            coarse = Some((sol, q, params));
        }
    }
    let c = calibrate_allowance(&reports[0], &reports[1], dt, h).unwrap();
    let within: Vec<bool> =
        reports[0].entries.iter().map(|e| e.gap.abs() <= 2.0 * e.estimate.stderr + c * (dt + h)).collect();
    let (sol, q, params) = coarse.unwrap();
    let zero = q.control_set.closest(&[0.0]);
    let never = FeedbackPolicy::uniform(q.grid(), Action::Control { index: zero });
    let adversarial =
        verification_gap(&sol.value, &q, &never, &x0, &params, c * (dt + h), Execution::Parallel).unwrap();
    let positive = adversarial.entries.iter().filter(|e| e.significantly_positive).count();
    let gaps: Vec<String> = reports[0].entries.iter().map(|e| format!("{:.1e}", e.gap)).collect();
    verdict(
        8,
        within.iter().all(|&w| w) && positive >= 1,
        format!(
            "C = {c:.3}, gaps [{}] within 2 se + C(dt + h) at {}/5; never-act significantly positive at {positive}/5",
            gaps.join(", "),
            within.iter().filter(|&&w| w).count()
        ),
    )
}

fn freeze_ladder(cat: &[(ProblemSpec, BenchmarkOracle)]) -> bool {
    let p = &cat[3].0;
    let mut gaps = Vec::new();
    let mut bounded = true;
    for tol in [1e-4, 1e-6, 1e-8] {
        let sol = solved(p, tol);
        let f = freeze_and_resolve(&sol.value, p, Execution::Parallel).unwrap();
        bounded &= f.sup_gap <= 10.0 * tol;
        gaps.push(f.sup_gap);
    }
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.2e}")).collect();
    verdict(9, bounded && monotone, format!("sup gaps [{}] for tol [1e-4, 1e-6, 1e-8]", shown.join(", ")))
}

fn run_cli(args: &[&str]) -> i32 {
    smoothfit::cli::run(std::iter::once("smoothfit").chain(args.iter().copied()))
}

fn determinism() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"problem": {"benchmark": "B4"}, "seed": 11,
            "simulate": {"n_paths": 500, "dt": 0.01, "t_max": 14.0, "x0": [[-1.0], [0.5]]}}"#,
    )
    .unwrap();
    let files = ["V.json", "policy.json", "report.json", "simulation.json"];
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut codes = Vec::new();
    for threads in ["1", "2", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let out = out.to_str().unwrap();
        let cfg = config.to_str().unwrap();
        codes.push(run_cli(&["solve", "--config", cfg, "--out", out, "--threads", threads]));
        codes.push(run_cli(&["simulate", "--config", cfg, "--out", out, "--threads", threads]));
        runs.push(files.iter().map(|f| std::fs::read(Path::new(out).join(f)).unwrap()).collect());
    }
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        10,
        identical && codes.iter().all(|&c| c == 0),
        format!("solve + simulate artifacts byte-identical across 1, 2, 4 threads: {identical}; exit codes {codes:?}"),
    )
}

#[test]
fn acceptance_criteria() {
    let cat = catalog();
    let results = [
        put_oracle(&cat),
        range_probes(&cat),
        sharpness(&cat),
        witnesses(),
        continuity_ladder(&cat),
        value_bounds(&cat),
        qvi_properties(&cat),
        verification(&cat),
        freeze_ladder(&cat),
        determinism(),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

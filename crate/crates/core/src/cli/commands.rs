//! The five subcommands.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifact::{
    axis_columns, config_hash, num, nums, opt, read_json, text, write_json, Artifact, Status, Table,
};
use super::config::{PolicyChoice, RunConfig, WitnessInstance};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lattice::GridFunction;
use crate::problems::{ProblemClass, ProblemConfig, ProblemSpec};
use crate::regularity::{
    check_value_bounds, fit_bound_constant, gradient_continuity, kink_witness, probe_sweep, range_basis,
    semiconvexity_constant, smooth_fit_check, ContinuityReport, KinkWitness, ProbeSweep, Region,
    SemiconvexityCertificate, SmoothFitOutcome, ValueBoundsReport,
};
use crate::solver::{solve, SolveSettings};
use crate::synthesis::{feedback_map, verification_gap, Action, FeedbackPolicy, GapReport, SimulationParams};

pub const VALUE_FILE: &str = "V.json";
pub const POLICY_FILE: &str = "policy.json";
pub const SOLVE_REPORT_FILE: &str = "report.json";
pub const REGULARITY_FILE: &str = "regularity.json";
pub const WITNESS_FILE: &str = "witness.json";
pub const SIMULATION_FILE: &str = "simulation.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Everything a command needs besides its own parameters.
pub struct Context {
    pub config: RunConfig,
    pub base: PathBuf,
    pub out: PathBuf,
    pub format: Format,
}

/// Exit code and a one-line summary for stdout.
pub struct Outcome {
    pub code: i32,
    pub message: String,
}

#[derive(Serialize)]
struct Hashed<'a> {
    run: &'a RunConfig,
    problem: Option<&'a ProblemConfig>,
}

impl Context {
    fn problem(&self) -> Result<(ProblemSpec, String)> {
        let cfg = self.config.problem_config(&self.base)?;
        let hash = config_hash(&Hashed { run: &self.config, problem: Some(&cfg) })?;
        Ok((ProblemSpec::from_config(cfg)?, hash))
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        Ok(())
    }

    fn csv(&self) -> bool {
        self.format == Format::Csv
    }
}

fn csv_name(file: &str) -> String {
    file.replace(".json", ".csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueData {
    pub value: GridFunction,
    /// Stop or action region; empty for drift control.
    pub region: Vec<bool>,
}

pub fn solve_cmd(ctx: &Context) -> Result<Outcome> {
    let (problem, hash) = ctx.problem()?;
    let settings =
        SolveSettings { tol: ctx.config.solve.tol, max_iter: ctx.config.solve.max_iter, exec: Execution::Parallel };
    let sol = solve(&problem, problem.grid(), &settings)?;
    let status = if sol.report.converged { Status::Pass } else { Status::NotConverged };
    let warning = (!sol.report.converged).then(|| {
        format!(
            "not converged after {} iterations (residual {:e}); artifacts are partial",
            sol.report.iterations, sol.report.residual
        )
    });
    ctx.ensure_out()?;
    write_json(
        &ctx.path(VALUE_FILE),
        &Artifact::new("solve", &hash, status, ValueData { value: sol.value.clone(), region: sol.region.clone() })
            .with_warning(warning.clone()),
    )?;
    write_json(
        &ctx.path(POLICY_FILE),
        &Artifact::new("solve", &hash, status, sol.policy.clone()).with_warning(warning.clone()),
    )?;
    write_json(
        &ctx.path(SOLVE_REPORT_FILE),
        &Artifact::new("solve", &hash, status, sol.report.clone()).with_warning(warning.clone()),
    )?;
    if ctx.csv() {
        let grid = sol.value.grid();
        let mut header = axis_columns("x", grid.dim());
        header.extend(["value".into(), "region".into()]);
        let mut t = Table::new(&header);
        for k in 0..grid.node_count() {
            let mut row = nums(&grid.node(k));
            row.push(num(sol.value.values()[k]));
            row.push(sol.region.get(k).map(|r| r.to_string()).unwrap_or_default());
            t.row(&row);
        }
        t.write(&ctx.path(&csv_name(VALUE_FILE)))?;
    }
    let r = &sol.report;
    match warning {
        None => Ok(Outcome {
            code: 0,
            message: format!("solve: converged in {} iterations, residual {:e}", r.iterations, r.residual),
        }),
        Some(w) => Ok(Outcome { code: 2, message: format!("solve: warning: {w}") }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityData {
    pub probes: ProbeSweep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth_fit: Option<SmoothFitOutcome>,
    pub semiconvexity: SemiconvexityCertificate,
    pub bounds: ValueBoundsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuity: Option<ContinuityReport>,
    /// Range probes smooth and smooth-fit verdicts passed.
    pub passed: bool,
}

pub fn verify_cmd(ctx: &Context) -> Result<Outcome> {
    let (problem, hash) = ctx.problem()?;
    let stored: Artifact<ValueData> = read_json(&ctx.path(VALUE_FILE))?;
    let v = &stored.data.value;
    let grid = v.grid();
    let p = &ctx.config.verify;
    let seed = ctx.config.seed;
    let basis = |x: &[f64]| range_basis(&problem, x, p.tau_rank);

    let probes = probe_sweep(v, &problem, p.probes_per_axis, p.tau_rank, p.tol_jump, seed, Execution::Parallel)?;
    let region = &stored.data.region;
    let smooth_fit = if problem.obstacle.is_some() && region.iter().any(|&r| r) {
        let tol_deriv = p.smooth_fit_tol_deriv.unwrap_or(5.0 * grid.max_spacing());
        Some(smooth_fit_check(v, &problem, region, basis, p.smooth_fit_tol_value, tol_deriv)?)
    } else {
        None
    };
    let semiconvexity = semiconvexity_constant(v, &Region::whole(grid), p.semiconvexity_samples, seed)?;
    let m = match p.bounds_m {
        Some(m) => m,
        None => fit_bound_constant(v, p.bounds_p, p.bounds_samples, seed.wrapping_add(1), p.bounds_safety)?,
    };
    let bounds = check_value_bounds(v, m, p.bounds_p, p.bounds_samples, seed.wrapping_add(2))?;
    let continuity = match &p.continuity {
        Some(c) => {
            let region = Region::new(c.lower.clone(), c.upper.clone())?;
            Some(gradient_continuity(v, &region, basis, &c.deltas, c.pairs, seed.wrapping_add(3))?)
        }
        None => None,
    };
    let passed = probes.passed() && smooth_fit.as_ref().is_none_or(SmoothFitOutcome::passed);
    let message = format!(
        "verify: {} range probes, {} violations, {} kernel kinks, smooth fit {}",
        probes.range_probes,
        probes.range_violations,
        probes.kernel_kinks,
        match &smooth_fit {
            None => "n/a".to_string(),
            Some(s) => format!("{}/{} passed", s.reports.iter().filter(|r| r.passed).count(), s.reports.len()),
        }
    );
    ctx.ensure_out()?;
    if ctx.csv() {
        write_probe_csv(ctx, &probes, grid.dim())?;
        if let Some(s) = &smooth_fit {
            write_smooth_fit_csv(ctx, s, grid.dim())?;
        }
    }
    let status = if passed { Status::Pass } else { Status::Fail };
    let data = RegularityData { probes, smooth_fit, semiconvexity, bounds, continuity, passed };
    write_json(&ctx.path(REGULARITY_FILE), &Artifact::new("verify", &hash, status, data))?;
    Ok(Outcome { code: if passed { 0 } else { 3 }, message })
}

fn write_probe_csv(ctx: &Context, probes: &ProbeSweep, n: usize) -> Result<()> {
    let mut header = axis_columns("x", n);
    header.extend(axis_columns("d", n));
    header.extend(["kind", "slope_plus", "slope_minus", "jump", "tol_jump", "classification"].map(String::from));
    let mut t = Table::new(&header);
    for r in &probes.reports {
        let mut row = nums(&r.x);
        row.extend(nums(&r.direction));
        row.extend([
            enum_name(&r.kind)?,
            opt(r.slope_plus),
            opt(r.slope_minus),
            opt(r.jump),
            num(r.tol_jump),
            enum_name(&r.classification)?,
        ]);
        t.row(&row);
    }
    t.write(&ctx.path("probes.csv"))
}

fn write_smooth_fit_csv(ctx: &Context, s: &SmoothFitOutcome, n: usize) -> Result<()> {
    let mut header = axis_columns("x", n);
    header.extend(axis_columns("d", n));
    header.extend(
        ["kind", "value_gap", "slope_plus", "slope_minus", "obstacle_slope", "gap", "judged", "passed"]
            .map(String::from),
    );
    let mut t = Table::new(&header);
    for r in &s.reports {
        for d in &r.directions {
            let mut row = nums(&r.point);
            row.extend(nums(&d.direction));
            row.extend([
                enum_name(&d.kind)?,
                num(r.value_gap),
                num(d.slope_plus),
                num(d.slope_minus),
                opt(d.obstacle_slope),
                opt(d.gap),
                d.judged.to_string(),
                d.passed.to_string(),
            ]);
            t.row(&row);
        }
    }
    t.write(&ctx.path("smooth_fit.csv"))
}

fn enum_name<T: Serialize>(v: &T) -> Result<String> {
    match serde_json::to_value(v)? {
        serde_json::Value::String(s) => Ok(s),
        other => Ok(text(&other.to_string())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessData {
    pub tol: f64,
    pub witnesses: Vec<KinkWitness>,
    pub passed: bool,
}

fn random_instances(n: usize, m: usize, count: usize, seed: u64) -> Vec<WitnessInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let p1 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p2 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sigma0 = (0..n).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let kappa = rng.random_range(0.0..2.0);
            WitnessInstance { p1, p2, kappa, sigma0, label: format!("random-{i}"), operator: Default::default() }
        })
        .collect()
}

pub fn witness_cmd(ctx: &Context) -> Result<Outcome> {
    let w = &ctx.config.witness;
    let hash = match ctx.config.problem {
        Some(_) => ctx.problem()?.1,
        None => config_hash(&Hashed { run: &ctx.config, problem: None })?,
    };
    let mut instances = w.instances.clone();
    if let Some(r) = w.random {
        instances.extend(random_instances(r.n, r.m, r.count, ctx.config.seed));
    }
    if instances.is_empty() {
        instances.push(WitnessInstance {
            p1: vec![1.0],
            p2: vec![0.0],
            kappa: 0.0,
            sigma0: vec![vec![1.0]],
            label: "scalar".into(),
            operator: Default::default(),
        });
    }
    let mut witnesses = Vec::with_capacity(instances.len());
    for inst in &instances {
        let cols = inst.sigma0.first().map_or(0, Vec::len);
        if inst.sigma0.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch(format!("witness `{}`: sigma0 rows differ in length", inst.label)));
        }
        let s = DMatrix::from_row_iterator(inst.sigma0.len(), cols, inst.sigma0.iter().flatten().copied());
        witnesses.push(kink_witness(&inst.p1, &inst.p2, inst.kappa, &s, &inst.label, &w.j_list, &inst.operator)?);
    }
    let passed = witnesses.iter().all(|x| x.passed(w.tol));
    ctx.ensure_out()?;
    if ctx.csv() {
        let header =
            ["instance", "j", "lambda", "gradient_error", "trace", "trace_error", "residual"].map(String::from);
        let mut t = Table::new(&header);
        for x in &witnesses {
            for (i, j) in x.j_list.iter().enumerate() {
                t.row(&[
                    text(&x.a_label),
                    j.to_string(),
                    num(x.lambda[i]),
                    num(x.gradient_error[i]),
                    num(x.trace[i]),
                    num(x.trace_error[i]),
                    num(x.residual[i]),
                ]);
            }
        }
        t.write(&ctx.path(&csv_name(WITNESS_FILE)))?;
    }
    let count = witnesses.len();
    let status = if passed { Status::Pass } else { Status::Fail };
    write_json(
        &ctx.path(WITNESS_FILE),
        &Artifact::new("witness", &hash, status, WitnessData { tol: w.tol, witnesses, passed }),
    )?;
    Ok(Outcome {
        code: if passed { 0 } else { 3 },
        message: format!("witness: {count} instances, identities {}", if passed { "hold" } else { "FAIL" }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationData {
    pub policy: PolicyChoice,
    pub params: SimulationParams,
    pub report: GapReport,
    pub any_significantly_negative: bool,
    pub any_significantly_positive: bool,
}

/// Policy that never stops or jumps; drift control applies the control
/// closest to zero.
pub fn never_act_policy(problem: &ProblemSpec, grid: &crate::lattice::Grid) -> FeedbackPolicy {
    let action = match problem.class {
        ProblemClass::DriftControl => {
            Action::Control { index: problem.control_set.closest(&vec![0.0; problem.control_set.dim()]) }
        }
        _ => Action::Continue,
    };
    FeedbackPolicy::uniform(grid, action)
}

pub fn simulate_cmd(ctx: &Context) -> Result<Outcome> {
    let (problem, hash) = ctx.problem()?;
    let s = ctx.config.simulate.as_ref().ok_or_else(|| Error::InvalidArgument("missing field `simulate`".into()))?;
    let params =
        SimulationParams { n_paths: s.n_paths, dt: s.dt, t_max: s.t_max, tail_tol: s.tail_tol, seed: ctx.config.seed };
    params.validate()?;
    let stored: Artifact<ValueData> = read_json(&ctx.path(VALUE_FILE))?;
    let v = &stored.data.value;
    let choice = match s.policy {
        PolicyChoice::Auto if problem.drift_split.is_some() => PolicyChoice::Feedback,
        PolicyChoice::Auto => PolicyChoice::Solved,
        c => c,
    };
    let policy = match choice {
        PolicyChoice::Feedback => feedback_map(v, &problem)?,
        PolicyChoice::NeverAct => never_act_policy(&problem, v.grid()),
        _ => read_json::<Artifact<FeedbackPolicy>>(&ctx.path(POLICY_FILE))?.data,
    };
    let report = verification_gap(v, &problem, &policy, &s.x0, &params, s.allowance, Execution::Parallel)?;
    let negative = report.any_significantly_negative();
    let positive = report.any_significantly_positive();
    ctx.ensure_out()?;
    if ctx.csv() {
        let mut header = axis_columns("x", problem.n());
        header.extend(
            [
                "value",
                "mean",
                "stderr",
                "tail_bound",
                "gap",
                "allowance",
                "significantly_positive",
                "significantly_negative",
            ]
            .map(String::from),
        );
        let mut t = Table::new(&header);
        for e in &report.entries {
            let mut row = nums(&e.x0);
            row.extend([
                num(e.value),
                num(e.estimate.mean),
                num(e.estimate.stderr),
                num(e.estimate.tail_bound),
                num(e.gap),
                num(e.allowance),
                e.significantly_positive.to_string(),
                e.significantly_negative.to_string(),
            ]);
            t.row(&row);
        }
        t.write(&ctx.path(&csv_name(SIMULATION_FILE)))?;
    }
    let status = if negative { Status::Fail } else { Status::Pass };
    let count = report.entries.len();
    let data = SimulationData {
        policy: choice,
        params,
        report,
        any_significantly_negative: negative,
        any_significantly_positive: positive,
    };
    write_json(&ctx.path(SIMULATION_FILE), &Artifact::new("simulate", &hash, status, data))?;
    Ok(Outcome {
        code: if negative { 3 } else { 0 },
        message: format!(
            "simulate: {count} start points, significantly negative gap: {negative}, significantly positive gap: {positive}"
        ),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub artifact: String,
    pub command: String,
    pub config_hash: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryData {
    pub entries: Vec<SummaryEntry>,
}

pub fn report_cmd(out: &Path, format: Format) -> Result<Outcome> {
    let mut entries = Vec::new();
    for file in [VALUE_FILE, POLICY_FILE, SOLVE_REPORT_FILE, REGULARITY_FILE, WITNESS_FILE, SIMULATION_FILE] {
        let path = out.join(file);
        if !path.exists() {
            continue;
        }
        let a: Artifact<serde_json::Value> = read_json(&path)?;
        entries.push(SummaryEntry {
            artifact: file.into(),
            command: a.command,
            config_hash: a.config_hash,
            status: a.status,
            warning: a.warning,
        });
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!("no artifacts found in {}", out.display())));
    }
    let code = if entries.iter().any(|e| e.status == Status::Fail) {
        3
    } else if entries.iter().any(|e| e.status == Status::NotConverged) {
        2
    } else {
        0
    };
    let mut lines = Vec::new();
    for e in &entries {
        lines.push(format!("{:<16} {:<9} {}", e.artifact, enum_name(&e.status)?, e.config_hash));
    }
    if format == Format::Csv {
        let mut t = Table::new(&["artifact", "command", "config_hash", "status", "warning"].map(String::from));
        for e in &entries {
            t.row(&[
                text(&e.artifact),
                text(&e.command),
                text(&e.config_hash),
                enum_name(&e.status)?,
                text(e.warning.as_deref().unwrap_or("")),
            ]);
        }
        t.write(&out.join(csv_name(SUMMARY_FILE)))?;
    }
    let hash = config_hash(&entries)?;
    let status = match code {
        0 => Status::Pass,
        2 => Status::NotConverged,
        _ => Status::Fail,
    };
    write_json(&out.join(SUMMARY_FILE), &Artifact::new("report", &hash, status, SummaryData { entries }))?;
    Ok(Outcome { code, message: lines.join("\n") })
}

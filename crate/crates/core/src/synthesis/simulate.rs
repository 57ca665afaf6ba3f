//! Monte Carlo evaluation of feedback policies.
//!
//! Euler–Maruyama paths with one ChaCha8 stream per path (key from the seed,
//! stream id = path index). Paths that leave the box are absorbed at the
//! nearest boundary point and frozen there; their remaining reward is the
//! closed-form discounted integral at the frozen state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Action, FeedbackPolicy};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lattice::GridFunction;
use crate::problems::{ProblemClass, ProblemSpec};

pub const SEED_SCHEME: &str = "chacha8: key from seed, stream = path index";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    /// Required bound on `exp(-rho_min * t_max)`.
    pub tail_tol: f64,
    pub seed: u64,
}

impl SimulationParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidArgument(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return Err(Error::InvalidArgument(format!("tail_tol must lie in (0, 1), got {}", self.tail_tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationEstimate {
    pub x0: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Bound on the discounted payoff beyond `t_max`.
    pub tail_bound: f64,
    pub seed: u64,
    pub seed_scheme: String,
    pub absorbed_paths: usize,
    pub stopped_paths: usize,
    pub impulses: usize,
}

struct PathOutcome {
    value: f64,
    absorbed: bool,
    stopped: bool,
    impulses: usize,
}

/// Discounted integral of a constant rate `g` over `[0, t]` at discount `rho`.
fn discounted(g: f64, rho: f64, t: f64) -> f64 {
    if rho.abs() * t < 1e-12 {
        g * t
    } else {
        g * -(-rho * t).exp_m1() / rho
    }
}

struct Simulator<'a> {
    problem: &'a ProblemSpec,
    policy: &'a FeedbackPolicy,
    params: SimulationParams,
    costs: Option<(f64, f64)>,
    steps: usize,
}

impl Simulator<'_> {
    fn control(&self, action: Action) -> usize {
        match action {
            Action::Control { index } => index,
            _ => 0,
        }
    }

    fn path(&self, x0: &[f64], path: u64) -> Result<PathOutcome> {
        let p = self.problem;
        let grid = self.policy.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(path);
        let n = p.n();
        let mut x = x0.to_vec();
        let mut discount = 1.0;
        let mut value = 0.0;
        let mut impulses = 0;
        let dt = self.params.dt;
        let sqdt = dt.sqrt();
        for step in 0..self.steps {
            let mut action = self.policy.action_at(&x);
            match action {
                Action::Stop => {
                    let psi = p
                        .obstacle_at(&x)
                        .ok_or_else(|| Error::InvalidProblem("stop action without obstacle".into()))??;
                    return Ok(PathOutcome { value: value + discount * psi, absorbed: false, stopped: true, impulses });
                }
                Action::Impulse { target } => {
                    let (c0, c1) =
                        self.costs.ok_or_else(|| Error::InvalidProblem("impulse action without costs".into()))?;
                    let y = grid.node(target);
                    let jump = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    value -= discount * (c0 * jump + c1);
                    x = y;
                    impulses += 1;
                    action = Action::Continue;
                }
                _ => {}
            }
            let a = p.control_set.get(self.control(action));
            let rho = p.rho(&x, a)?;
            let g = p.reward(&x, a)?;
            value += discount * discounted(g, rho, dt);
            discount *= (-rho * dt).exp();
            let beta = p.beta(&x, a)?;
            let sigma = p.sigma(&x, a)?;
            let z: Vec<f64> = (0..sigma.ncols()).map(|_| StandardNormal.sample(&mut rng)).collect();
            for i in 0..n {
                let noise: f64 = (0..sigma.ncols()).map(|j| sigma[(i, j)] * z[j]).sum();
                x[i] += beta[i] * dt + noise * sqdt;
            }
            if !grid.contains(&x) {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = xi.clamp(grid.lower()[i], grid.upper()[i]);
                }
                let remaining = self.params.t_max - (step + 1) as f64 * dt;
                let frozen = self.policy.action_at(&x);
                let a = p.control_set.get(self.control(frozen));
                let rho = p.rho(&x, a)?;
                let tail = match frozen {
                    Action::Stop => p.obstacle_at(&x).expect("stop action checked above")?,
                    _ => discounted(p.reward(&x, a)?, rho, remaining),
                };
                return Ok(PathOutcome { value: value + discount * tail, absorbed: true, stopped: false, impulses });
            }
        }
        Ok(PathOutcome { value, absorbed: false, stopped: false, impulses })
    }
}

fn tail_bound(problem: &ProblemSpec, policy: &FeedbackPolicy, rho_min: f64, t_max: f64) -> Result<f64> {
    let grid = policy.grid();
    let mut scale = 0.0f64;
    for k in 0..grid.node_count() {
        let x = grid.node(k);
        for a in problem.control_set.iter() {
            scale = scale.max(problem.reward(&x, a)?.abs() / rho_min);
        }
        if let Some(psi) = problem.obstacle_at(&x) {
            scale = scale.max(psi?.abs());
        }
    }
    Ok((-rho_min * t_max).exp() * scale)
}

/// Discounted payoff of `policy` from `x0` by Euler–Maruyama simulation.
pub fn simulate(
    problem: &ProblemSpec,
    policy: &FeedbackPolicy,
    x0: &[f64],
    params: &SimulationParams,
    exec: Execution,
) -> Result<SimulationEstimate> {
    params.validate()?;
    let grid = policy.grid();
    if x0.len() != problem.n() || grid.dim() != problem.n() {
        return Err(Error::DimensionMismatch("x0, policy grid and problem dimensions differ".into()));
    }
    if !grid.contains(x0) {
        return Err(Error::OutOfBox { point: x0.to_vec() });
    }
    policy.check_controls(problem.control_set.len())?;
    let rho_min = problem.sampled_rho_min()?;
    let achieved = (-rho_min * params.t_max).exp();
    if !(rho_min > 0.0) || achieved > params.tail_tol {
        return Err(Error::TailTolerance { tail_tol: params.tail_tol, achieved });
    }
    let costs = match problem.class {
        ProblemClass::ImpulseControl => problem.impulse_costs.map(|c| (c.c0, c.c1)),
        _ => None,
    };
    let sim = Simulator { problem, policy, params: *params, costs, steps: (params.t_max / params.dt).ceil() as usize };
    let outcomes = exec::try_map_range(exec, params.n_paths, |i| sim.path(x0, i as u64))?;
    let values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let n = values.len() as f64;
    // shifting by the first path keeps identical paths exact in both moments
    let shift = values[0];
    let dev: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let sq: Vec<f64> = dev.iter().map(|d| d * d).collect();
    let s1 = exec::pairwise_sum(&dev);
    let mean = shift + s1 / n;
    let var = if values.len() > 1 { ((exec::pairwise_sum(&sq) - s1 * s1 / n) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(SimulationEstimate {
        x0: x0.to_vec(),
        n_paths: params.n_paths,
        dt: params.dt,
        t_max: params.t_max,
        mean,
        stderr: (var / n).sqrt(),
        tail_bound: tail_bound(problem, policy, rho_min, params.t_max)?,
        seed: params.seed,
        seed_scheme: SEED_SCHEME.into(),
        absorbed_paths: outcomes.iter().filter(|o| o.absorbed).count(),
        stopped_paths: outcomes.iter().filter(|o| o.stopped).count(),
        impulses: outcomes.iter().map(|o| o.impulses).sum(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub x0: Vec<f64>,
    pub value: f64,
    pub estimate: SimulationEstimate,
    /// `V(x0) - mean`.
    pub gap: f64,
    /// Discretisation allowance `C (dt + h)` supplied by the caller.
    pub allowance: f64,
    /// `gap > 3 stderr + allowance + tail_bound`: the policy is suboptimal.
    pub significantly_positive: bool,
    /// `gap < -(3 stderr + allowance + tail_bound)`: the value is dominated,
    /// which points to a solver bug.
    pub significantly_negative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub entries: Vec<GapEntry>,
}

impl GapReport {
    pub fn any_significantly_negative(&self) -> bool {
        self.entries.iter().any(|e| e.significantly_negative)
    }

    pub fn any_significantly_positive(&self) -> bool {
        self.entries.iter().any(|e| e.significantly_positive)
    }
}

/// Gap between the solved value and the simulated payoff of `policy` at
/// each start point. Every point uses the same seed.
pub fn verification_gap(
    v: &GridFunction,
    problem: &ProblemSpec,
    policy: &FeedbackPolicy,
    x0_list: &[Vec<f64>],
    params: &SimulationParams,
    allowance: f64,
    exec: Execution,
) -> Result<GapReport> {
    if !(allowance >= 0.0) {
        return Err(Error::InvalidArgument(format!("allowance must be >= 0, got {allowance}")));
    }
    let mut entries = Vec::with_capacity(x0_list.len());
    for x0 in x0_list {
        let estimate = simulate(problem, policy, x0, params, exec)?;
        let value = v.interpolate(x0)?;
        let gap = value - estimate.mean;
        let band = 3.0 * estimate.stderr + allowance + estimate.tail_bound;
        entries.push(GapEntry {
            x0: x0.clone(),
            value,
            gap,
            allowance,
            significantly_positive: gap > band,
            significantly_negative: gap < -band,
            estimate,
        });
    }
    Ok(GapReport { entries })
}

/// `C` in the allowance `C (dt + h)` from one halving of `dt` and `h`:
/// the largest `|gap_coarse - gap_fine| / ((dt + h) / 2)` over matching points.
pub fn calibrate_allowance(coarse: &GapReport, fine: &GapReport, dt: f64, h: f64) -> Result<f64> {
    if coarse.entries.len() != fine.entries.len() || !(dt + h > 0.0) {
        return Err(Error::InvalidArgument("calibration needs matching reports and dt + h > 0".into()));
    }
    Ok(coarse
        .entries
        .iter()
        .zip(&fine.entries)
        .map(|(c, f)| (c.gap - f.gap).abs() / (0.5 * (dt + h)))
        .fold(0.0, f64::max))
}

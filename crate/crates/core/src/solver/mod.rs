//! Finite-difference solvers for the HJB equation, the stopping variational
//! inequality and the impulse QVI.
//!
//! All three reduce to Howard's policy iteration over a finite set of
//! candidate rows per node: one per sampled control (`L^a u + g^a`) and, for
//! obstacle problems, a stopping row `psi - u`. Each policy-evaluation step
//! is a banded LU solve in natural row-major node order.

mod banded;
mod generator;
mod impulse;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use banded::{BandedLu, BandedMatrix};
pub use generator::{assemble_row, discretize, discretize_linear_part, DiscreteGenerator, LocalCoefficients, Row};
pub use impulse::{intervention_operator, intervention_targets, solve_impulse_qvi};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lattice::{Grid, GridFunction};
use crate::problems::{ProblemClass, ProblemSpec};
use crate::synthesis::{Action, FeedbackPolicy};

pub const ORDERING: &str = "natural row-major node order (last axis fastest), banded LU with partial pivoting";
pub const CERTIFICATE: &str = "discrete certificate";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings { tol: 1e-8, max_iter: 200, exec: Execution::Parallel }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidArgument(format!("tolerances > 0 required, got tol = {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OuterReport {
    pub iterations: usize,
    /// Sup-norm change between consecutive outer iterates.
    pub changes: Vec<f64>,
    /// Largest pointwise increase `max(V_{k+1} - V_k)` over all outer steps.
    pub max_increase: f64,
    pub non_increasing: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Sup-norm of the discrete residual over interior nodes.
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub policy_changes: Vec<usize>,
    pub ordering: String,
    /// Number of coarser grids solved to initialise the policy.
    pub coarse_levels: usize,
    pub certificate: String,
    pub converged: bool,
    /// False when the residual history increased after the first sweep.
    pub residual_monotone: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer: Option<OuterReport>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub value: GridFunction,
    pub policy: FeedbackPolicy,
    /// Stop region (stopping) or action region (impulse); empty otherwise.
    pub region: Vec<bool>,
    pub report: SolveReport,
}

impl Solution {
    pub fn require_converged(self) -> Result<Self> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence { iterations: self.report.iterations, residual: self.report.residual })
        }
    }
}

/// Per-control generators and running rewards of a problem on a grid.
#[derive(Clone, Debug)]
pub struct GeneratorBank {
    pub generators: Vec<DiscreteGenerator>,
    pub rewards: Vec<Vec<f64>>,
}

impl GeneratorBank {
    pub fn build(problem: &ProblemSpec, grid: &Grid, exec: Execution) -> Result<Self> {
        let controls = problem.control_set.len();
        if controls == 0 {
            return Err(Error::EmptyControlSet);
        }
        let mut generators = Vec::with_capacity(controls);
        let mut rewards = Vec::with_capacity(controls);
        for c in 0..controls {
            generators.push(discretize(problem, grid, c, exec)?);
            let a = problem.control_set.get(c);
            rewards.push(exec::try_map_range(exec, grid.node_count(), |k| problem.reward(&grid.node(k), a))?);
        }
        Ok(GeneratorBank { generators, rewards })
    }

    pub fn controls(&self) -> usize {
        self.generators.len()
    }

    /// `L^c u + g^c` at node `k`.
    pub fn value(&self, c: usize, k: usize, u: &[f64]) -> f64 {
        self.generators[c].apply_row(k, u) + self.rewards[c][k]
    }

    /// `max_c (L^c u + g^c)` at node `k` and the first maximiser.
    pub fn best(&self, k: usize, u: &[f64]) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..self.controls() {
            let v = self.value(c, k, u);
            if v > best.0 {
                best = (v, c);
            }
        }
        best
    }
}

/// Checks `rho >= rho_min > 0` over grid nodes and sampled controls and
/// returns the effective minimum.
pub fn check_rho_min(problem: &ProblemSpec, grid: &Grid) -> Result<f64> {
    let declared = problem.declared_rho_min();
    if let Some(r) = declared {
        if !(r > 0.0) {
            return Err(Error::InvalidProblem(format!("rho_min must be positive, got {r}")));
        }
    }
    let mut lo = (f64::INFINITY, 0usize);
    for k in 0..grid.node_count() {
        let x = grid.node(k);
        for a in problem.control_set.iter() {
            let r = problem.rho(&x, a)?;
            if r < lo.0 {
                lo = (r, k);
            }
        }
    }
    let floor = declared.unwrap_or(0.0);
    if lo.0 < floor || lo.0 <= 0.0 {
        return Err(Error::RhoMin { node: lo.1, found: lo.0, rho_min: floor });
    }
    Ok(declared.unwrap_or(lo.0))
}

/// Candidate rows: every control of the bank, plus a stopping row
/// `obstacle - u` (index `bank.controls()`) when an obstacle is given.
pub(crate) struct HowardSystem<'a> {
    pub bank: &'a GeneratorBank,
    pub obstacle: Option<&'a [f64]>,
}

pub(crate) struct HowardOutcome {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub report: SolveReport,
}

impl HowardSystem<'_> {
    fn candidates(&self) -> usize {
        self.bank.controls() + usize::from(self.obstacle.is_some())
    }

    fn value(&self, c: usize, k: usize, u: &[f64]) -> f64 {
        if c < self.bank.controls() {
            self.bank.value(c, k, u)
        } else {
            self.obstacle.expect("stopping row requires an obstacle")[k] - u[k]
        }
    }

    fn best(&self, k: usize, u: &[f64]) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..self.candidates() {
            let v = self.value(c, k, u);
            if v > best.0 {
                best = (v, c);
            }
        }
        best
    }

    fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for g in &self.bank.generators {
            for k in 0..g.len() {
                for (c, _) in g.off_diagonal(k) {
                    if c < k {
                        kl = kl.max(k - c);
                    } else {
                        ku = ku.max(c - k);
                    }
                }
            }
        }
        (kl, ku)
    }

    fn evaluate(&self, policy: &[usize], band: (usize, usize)) -> Result<Vec<f64>> {
        let n = policy.len();
        let mut m = BandedMatrix::zeros(n, band.0, band.1);
        let mut rhs = vec![0.0; n];
        for (k, &c) in policy.iter().enumerate() {
            if c < self.bank.controls() {
                let g = &self.bank.generators[c];
                m.add(k, k, g.diag(k))?;
                for (j, w) in g.off_diagonal(k) {
                    m.add(k, j, w)?;
                }
                rhs[k] = -self.bank.rewards[c][k];
            } else {
                m.add(k, k, -1.0)?;
                rhs[k] = -self.obstacle.expect("stopping row requires an obstacle")[k];
            }
        }
        Ok(m.factorize()?.solve(&rhs))
    }

    /// Howard's algorithm from `policy`; stops once the residual over all
    /// nodes is below `tol`. Non-convergence is reported, not raised.
    pub fn run(&self, grid: &Grid, mut policy: Vec<usize>, settings: &SolveSettings) -> Result<HowardOutcome> {
        let start = Instant::now();
        let band = self.bandwidth();
        let n = grid.node_count();
        let mut report = SolveReport {
            ordering: ORDERING.into(),
            certificate: CERTIFICATE.into(),
            residual_monotone: true,
            ..SolveReport::default()
        };
        loop {
            report.iterations += 1;
            let u = self.evaluate(&policy, band)?;
            let evals = exec::map_range(settings.exec, n, |k| (self.best(k, &u), self.value(policy[k], k, &u)));
            let mut interior = 0.0f64;
            let mut all = 0.0f64;
            for (k, ((best, _), _)) in evals.iter().enumerate() {
                all = all.max(best.abs());
                if !grid.is_boundary_node(k) {
                    interior = interior.max(best.abs());
                }
            }
            if report.residual_history.len() >= 2 && interior > report.residual + f64::EPSILON {
                report.residual_monotone = false;
            }
            report.residual = interior;
            report.residual_history.push(interior);
            if all <= settings.tol {
                report.converged = true;
                let policy = evals.iter().map(|((_, c), _)| *c).collect();
                report.wall_time_secs = start.elapsed().as_secs_f64();
                return Ok(HowardOutcome { values: u, policy, report });
            }
            let mut changes = 0;
            for (k, ((best, c), current)) in evals.iter().enumerate() {
                if *c != policy[k] && *best > current + 1e-13 * (1.0 + best.abs()) {
                    policy[k] = *c;
                    changes += 1;
                }
            }
            report.policy_changes.push(changes);
            if changes == 0 || report.iterations >= settings.max_iter {
                report.wall_time_secs = start.elapsed().as_secs_f64();
                let policy = evals.iter().map(|((_, c), _)| *c).collect();
                return Ok(HowardOutcome { values: u, policy, report });
            }
        }
    }

    /// Policy maximising the candidate rows applied to the zero function.
    pub fn initial_policy(&self, n: usize) -> Vec<usize> {
        let zero = vec![0.0; n];
        (0..n).map(|k| self.best(k, &zero).1).collect()
    }
}

/// Solves whichever equation the problem class calls for. Non-convergence
/// is recorded in the report (`converged = false`) and the partial solution
/// is returned, so callers can still persist artifacts.
pub fn solve(problem: &ProblemSpec, grid: &Grid, settings: &SolveSettings) -> Result<Solution> {
    settings.validate()?;
    match problem.class {
        ProblemClass::DriftControl => hjb(problem, grid, settings),
        ProblemClass::OptimalStopping => obstacle(problem, grid, settings),
        ProblemClass::ImpulseControl => impulse::qvi(problem, grid, settings),
    }
}

/// An axis is halved for the next coarser level while it keeps at least
/// this many points.
const COARSEST_POINTS: usize = 16;

fn coarser(grid: &Grid) -> Option<Grid> {
    let points: Vec<usize> =
        grid.points().iter().map(|&p| if p >= 2 * COARSEST_POINTS { (p - 1) / 2 + 1 } else { p }).collect();
    if points == grid.points() {
        return None;
    }
    Grid::new(grid.lower(), grid.upper(), &points).ok()
}

/// Howard's algorithm on `grid`, started from the policy of the same
/// problem solved on successively coarser grids (nested iteration). The
/// fine policy at each node is the coarse policy at the nearest coarse node.
fn nested_howard(
    problem: &ProblemSpec,
    grid: &Grid,
    settings: &SolveSettings,
    with_obstacle: bool,
) -> Result<(HowardOutcome, Vec<f64>, usize)> {
    let psi = if with_obstacle { obstacle_field(problem, grid, settings.exec)? } else { Vec::new() };
    let bank = GeneratorBank::build(problem, grid, settings.exec)?;
    let system = HowardSystem { bank: &bank, obstacle: with_obstacle.then_some(psi.as_slice()) };
    let n = grid.node_count();
    let mut levels = 0;
    let mut init = system.initial_policy(n);
    if let Some(coarse) = coarser(grid) {
        // a coarse level that fails (e.g. monotonicity at larger spacing) is skipped
        if let Ok((out, _, l)) = nested_howard(problem, &coarse, settings, with_obstacle) {
            init = (0..n).map(|k| out.policy[coarse.nearest_node(&grid.node(k))]).collect();
            levels = l + 1;
        }
    }
    let out = system.run(grid, init, settings)?;
    Ok((out, psi, levels))
}

fn hjb(problem: &ProblemSpec, grid: &Grid, settings: &SolveSettings) -> Result<Solution> {
    check_rho_min(problem, grid)?;
    let (mut out, _, levels) = nested_howard(problem, grid, settings, false)?;
    out.report.coarse_levels = levels;
    let actions = out.policy.iter().map(|&index| Action::Control { index }).collect();
    Ok(Solution {
        value: GridFunction::new(grid.clone(), out.values)?,
        policy: FeedbackPolicy::new(grid.clone(), actions)?,
        region: Vec::new(),
        report: out.report,
    })
}

/// Obstacle values at grid nodes.
pub fn obstacle_field(problem: &ProblemSpec, grid: &Grid, exec: Execution) -> Result<Vec<f64>> {
    if problem.obstacle.is_none() {
        return Err(Error::InvalidProblem("optimal stopping requires an obstacle".into()));
    }
    exec::try_map_range(exec, grid.node_count(), |k| problem.obstacle_at(&grid.node(k)).expect("obstacle present"))
}

fn obstacle(problem: &ProblemSpec, grid: &Grid, settings: &SolveSettings) -> Result<Solution> {
    check_rho_min(problem, grid)?;
    let (mut out, psi, levels) = nested_howard(problem, grid, settings, true)?;
    out.report.coarse_levels = levels;
    let region: Vec<bool> = out.values.iter().zip(&psi).map(|(v, g)| v - g <= settings.tol).collect();
    let actions = region.iter().map(|&s| if s { Action::Stop } else { Action::Continue }).collect();
    Ok(Solution {
        value: GridFunction::new(grid.clone(), out.values)?,
        policy: FeedbackPolicy::new(grid.clone(), actions)?,
        region,
        report: out.report,
    })
}

/// Howard's policy iteration for the HJB equation `H(x, v, Dv, D^2 v) = 0`.
pub fn policy_iteration(problem: &ProblemSpec, grid: &Grid, tol: f64, max_iter: usize) -> Result<Solution> {
    let settings = SolveSettings { tol, max_iter, ..SolveSettings::default() };
    settings.validate()?;
    if problem.class != ProblemClass::DriftControl {
        return Err(Error::InvalidProblem("policy_iteration expects a drift-control problem".into()));
    }
    hjb(problem, grid, &settings)?.require_converged()
}

/// Solves `min{-L v - g, v - psi} = 0`; the solution's region is the stop
/// region `{V - psi <= tol}`.
pub fn solve_obstacle(problem: &ProblemSpec, grid: &Grid, tol: f64, max_iter: usize) -> Result<Solution> {
    let settings = SolveSettings { tol, max_iter, ..SolveSettings::default() };
    settings.validate()?;
    if problem.class != ProblemClass::OptimalStopping {
        return Err(Error::InvalidProblem("solve_obstacle expects an optimal-stopping problem".into()));
    }
    obstacle(problem, grid, &settings)?.require_converged()
}

/// Field `x -> -max_a (L^a v + g^a)(x)` and the interior mask.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualField {
    pub values: Vec<f64>,
    pub interior: Vec<bool>,
    pub certificate: String,
}

impl ResidualField {
    /// Smallest residual over interior nodes.
    pub fn interior_min(&self) -> f64 {
        self.values.iter().zip(&self.interior).filter(|(_, i)| **i).map(|(v, _)| *v).fold(f64::INFINITY, f64::min)
    }

    pub fn certifies(&self, tol: f64) -> bool {
        self.interior_min() >= -tol
    }
}

pub fn supersolution_residual(v: &GridFunction, problem: &ProblemSpec, exec: Execution) -> Result<ResidualField> {
    let grid = v.grid();
    if grid != problem.grid() {
        return Err(Error::DimensionMismatch("grid function is not defined on the problem grid".into()));
    }
    let bank = GeneratorBank::build(problem, grid, exec)?;
    let u = v.values();
    let values = exec::map_range(exec, grid.node_count(), |k| -bank.best(k, u).0);
    let interior = (0..grid.node_count()).map(|k| !grid.is_boundary_node(k)).collect();
    Ok(ResidualField { values, interior, certificate: CERTIFICATE.into() })
}

#[cfg(test)]
mod tests;

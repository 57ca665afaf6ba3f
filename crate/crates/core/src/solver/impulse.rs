//! Impulse control: intervention operator and the outer QVI fixed point.

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lattice::{Grid, GridFunction};
use crate::problems::{ProblemClass, ProblemSpec};
use crate::synthesis::{Action, FeedbackPolicy};

use super::{check_rho_min, GeneratorBank, HowardSystem, OuterReport, Solution, SolveSettings};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_costs(c0: f64, c1: f64) -> Result<()> {
    if !(c0 > 0.0 && c1 > 0.0) {
        return Err(Error::InvalidArgument(format!("impulse costs must be positive, got c0={c0}, c1={c1}")));
    }
    Ok(())
}

/// `(Mv)(x) = max_y v(y) - c0 |y - x| - c1` over grid nodes `y`, with the
/// first maximising node. This is an inner approximation: the continuum
/// supremum is at least as large.
pub fn intervention_targets(v: &GridFunction, c0: f64, c1: f64, exec: Execution) -> Result<Vec<(f64, usize)>> {
    check_costs(c0, c1)?;
    let grid = v.grid();
    let nodes: Vec<Vec<f64>> = (0..grid.node_count()).map(|k| grid.node(k)).collect();
    let vals = v.values();
    Ok(exec::map_range(exec, nodes.len(), |k| {
        let mut best = (f64::NEG_INFINITY, k);
        for (j, y) in nodes.iter().enumerate() {
            let cand = vals[j] - c0 * distance(y, &nodes[k]) - c1;
            if cand > best.0 {
                best = (cand, j);
            }
        }
        best
    }))
}

pub fn intervention_operator(v: &GridFunction, c0: f64, c1: f64) -> Result<GridFunction> {
    let t = intervention_targets(v, c0, c1, Execution::default())?;
    GridFunction::new(v.grid().clone(), t.into_iter().map(|(m, _)| m).collect())
}

/// Solves the QVI `min{-L v - g, v - Mv} = 0` by iterating obstacle solves
/// `V_{k+1} = obstacle(M V_k)` from a constant supersolution.
pub fn solve_impulse_qvi(problem: &ProblemSpec, grid: &Grid, tol: f64, max_iter: usize) -> Result<Solution> {
    let settings = SolveSettings { tol, max_iter, ..SolveSettings::default() };
    settings.validate()?;
    qvi(problem, grid, &settings)?.require_converged()
}

pub(super) fn qvi(problem: &ProblemSpec, grid: &Grid, settings: &SolveSettings) -> Result<Solution> {
    if problem.class != ProblemClass::ImpulseControl {
        return Err(Error::InvalidProblem("impulse QVI expects an impulse-control problem".into()));
    }
    let costs =
        problem.impulse_costs.ok_or_else(|| Error::InvalidProblem("impulse control requires impulse_costs".into()))?;
    check_costs(costs.c0, costs.c1)?;
    check_rho_min(problem, grid)?;
    let bank = GeneratorBank::build(problem, grid, settings.exec)?;
    let n = grid.node_count();

    // A constant C with rho C >= g everywhere is a supersolution of the QVI,
    // so the iterates decrease from it.
    let a0 = problem.control_set.get(0);
    let mut start = f64::NEG_INFINITY;
    for k in 0..n {
        let x = grid.node(k);
        start = start.max(bank.rewards[0][k] / problem.rho(&x, a0)?);
    }
    let mut current = GridFunction::constant(grid, start);
    let mut outer = OuterReport { non_increasing: true, ..OuterReport::default() };
    let mut policy: Option<Vec<usize>> = None;
    let mut report;
    let mut converged = false;
    let mut targets;
    loop {
        targets = intervention_targets(&current, costs.c0, costs.c1, settings.exec)?;
        let obstacle: Vec<f64> = targets.iter().map(|(m, _)| *m).collect();
        let system = HowardSystem { bank: &bank, obstacle: Some(&obstacle) };
        let init = policy.take().unwrap_or_else(|| system.initial_policy(n));
        let out = system.run(grid, init, settings)?;
        let mut change = 0.0f64;
        let mut increase = f64::NEG_INFINITY;
        for (new, old) in out.values.iter().zip(current.values()) {
            change = change.max((new - old).abs());
            increase = increase.max(new - old);
        }
        outer.iterations += 1;
        outer.changes.push(change);
        outer.max_increase = if outer.iterations == 1 { increase } else { outer.max_increase.max(increase) };
        if increase > settings.tol {
            outer.non_increasing = false;
        }
        let inner_ok = out.report.converged;
        report = out.report;
        policy = Some(out.policy);
        current = GridFunction::new(grid.clone(), out.values)?;
        if !inner_ok {
            break;
        }
        if change <= settings.tol {
            converged = true;
            break;
        }
        if outer.iterations >= settings.max_iter {
            break;
        }
    }
    targets = intervention_targets(&current, costs.c0, costs.c1, settings.exec)?;
    let region: Vec<bool> = current.values().iter().zip(&targets).map(|(v, (m, _))| v - m <= settings.tol).collect();
    let actions = region
        .iter()
        .zip(&targets)
        .map(|(&act, (_, y))| if act { Action::Impulse { target: *y } } else { Action::Continue })
        .collect();
    report.converged = converged;
    report.outer = Some(outer);
    Ok(Solution { value: current, policy: FeedbackPolicy::new(grid.clone(), actions)?, region, report })
}

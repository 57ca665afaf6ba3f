//! Structure condition, feedback synthesis and the frozen linear problem.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Action, FeedbackPolicy};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lattice::GridFunction;
use crate::problems::ProblemSpec;
use crate::regularity::{projected_gradient, RangeBasis, DEFAULT_TAU_RANK, PROBE_LAYER};
use crate::solver::{discretize_linear_part, BandedMatrix, GeneratorBank};

/// Tolerance on `|(I - P_range(sigma)) P_S|` for the structure condition.
pub const STRUCTURE_TOL: f64 = 1e-8;

fn require_split(problem: &ProblemSpec) -> Result<()> {
    if problem.drift_split.is_none() {
        return Err(Error::InvalidProblem("operation requires a drift split (beta = beta0 + beta1)".into()));
    }
    Ok(())
}

/// `S(x) = Span{beta1(x, a)}` over the sampled controls. The rank may be zero.
pub fn drift_span(problem: &ProblemSpec, x: &[f64]) -> Result<RangeBasis> {
    require_split(problem)?;
    let n = problem.n();
    let mut cols = Vec::with_capacity(n * problem.control_set.len());
    for a in problem.control_set.iter() {
        cols.extend(problem.beta1(x, a).expect("drift split present")?);
    }
    let m = DMatrix::from_vec(n, problem.control_set.len(), cols);
    RangeBasis::from_columns(x, &m, DEFAULT_TAU_RANK)
}

fn sigma_span(problem: &ProblemSpec, x: &[f64]) -> Result<RangeBasis> {
    let n = problem.n();
    let mut cols = Vec::new();
    let mut count = 0;
    for a in problem.control_set.iter() {
        let s = problem.sigma(x, a)?;
        cols.extend(s.iter());
        count += s.ncols();
    }
    RangeBasis::from_columns(x, &DMatrix::from_vec(n, count, cols), DEFAULT_TAU_RANK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureEntry {
    pub x: Vec<f64>,
    pub drift_rank: usize,
    pub sigma_rank: usize,
    /// Spectral norm of `(I - P_range(sigma)) P_S`.
    pub defect: f64,
    pub contained: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub entries: Vec<StructureEntry>,
    pub worst: Option<usize>,
    pub passed: bool,
}

/// Checks `S(x) ⊆ range(sigma(x))` at every sample point.
pub fn structure_check(problem: &ProblemSpec, sample_points: &[Vec<f64>]) -> Result<StructureReport> {
    require_split(problem)?;
    let n = problem.n();
    let mut entries = Vec::with_capacity(sample_points.len());
    for x in sample_points {
        let s = drift_span(problem, x)?;
        let r = sigma_span(problem, x)?;
        let m = (DMatrix::identity(n, n) - r.projector()) * s.projector();
        let defect = m.svd(false, false).singular_values.max();
        entries.push(StructureEntry {
            x: x.clone(),
            drift_rank: s.rank(),
            sigma_rank: r.rank(),
            defect,
            contained: defect <= STRUCTURE_TOL,
        });
    }
    let worst =
        entries.iter().enumerate().max_by(|a, b| a.1.defect.total_cmp(&b.1.defect).then(b.0.cmp(&a.0))).map(|(i, _)| i);
    let passed = entries.iter().all(|e| e.contained);
    Ok(StructureReport { entries, worst, passed })
}

fn inner_index(k: usize, points: usize) -> Result<usize> {
    if points < 2 * PROBE_LAYER + 1 {
        return Err(Error::InvalidArgument(format!(
            "feedback synthesis needs at least {} points per axis, got {points}",
            2 * PROBE_LAYER + 1
        )));
    }
    Ok(k.clamp(PROBE_LAYER, points - 1 - PROBE_LAYER))
}

/// `argmax_a {g(x, a) + <beta1(x, a), D_S V(x)>}` with first-occurrence ties.
pub fn nonlinear_argmax(problem: &ProblemSpec, x: &[f64], gradient: &[f64]) -> Result<(f64, usize)> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (c, a) in problem.control_set.iter().enumerate() {
        let b1 = problem.beta1(x, a).expect("drift split present")?;
        let v = problem.reward(x, a)? + b1.iter().zip(gradient).map(|(b, p)| b * p).sum::<f64>();
        if v > best.0 {
            best = (v, c);
        }
    }
    Ok(best)
}

/// Feedback map from the projected gradient `D_S V`. Nodes within four cells
/// of a face copy the action of the nearest node outside that layer.
pub fn feedback_map(v: &GridFunction, problem: &ProblemSpec) -> Result<FeedbackPolicy> {
    require_split(problem)?;
    let grid = v.grid();
    if grid.dim() != problem.n() {
        return Err(Error::DimensionMismatch("value grid and problem dimensions differ".into()));
    }
    let n = grid.node_count();
    let source: Vec<usize> = (0..n)
        .map(|k| {
            let multi: Vec<usize> = grid
                .multi_index(k)
                .iter()
                .zip(grid.points())
                .map(|(&i, &p)| inner_index(i, p))
                .collect::<Result<_>>()?;
            Ok(grid.flat_index(&multi))
        })
        .collect::<Result<_>>()?;
    let chosen = exec::try_map_range(Execution::default(), n, |k| {
        if source[k] != k {
            return Ok(None);
        }
        let x = grid.node(k);
        let s = drift_span(problem, &x)?;
        let grad = projected_gradient(v, &x, &s, None)?;
        Ok::<Option<usize>, Error>(Some(nonlinear_argmax(problem, &x, &grad)?.1))
    })?;
    let actions = (0..n).map(|k| Action::Control { index: chosen[source[k]].expect("inner node computed") }).collect();
    FeedbackPolicy::new(grid.clone(), actions)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenSolution {
    pub value: GridFunction,
    /// Source `s = max_a (g^a + N^a V)` of the frozen problem.
    pub source: Vec<f64>,
    /// `|V_frozen - V|_inf` over interior nodes.
    pub sup_gap: f64,
}

/// Freezes the nonlinear part at `V` and solves the linear problem
/// `L0 v + s = 0` in the interior with `v = V` on boundary nodes.
///
/// `N^a V` is the upwinded `beta1` part of the discrete generator, i.e.
/// `(L^a V + g^a) - L0 V` row by row, so that a discrete fixed point of the
/// HJB scheme is reproduced up to its residual.
pub fn freeze_and_resolve(v: &GridFunction, problem: &ProblemSpec, exec: Execution) -> Result<FrozenSolution> {
    require_split(problem)?;
    let grid = v.grid();
    let l0 = discretize_linear_part(problem, grid, exec)?;
    let bank = GeneratorBank::build(problem, grid, exec)?;
    let vals = v.values();
    let n = grid.node_count();
    let source = exec::map_range(exec, n, |k| bank.best(k, vals).0 - l0.apply_row(k, vals));

    let (mut kl, mut ku) = (0, 0);
    for k in 0..n {
        for (c, _) in l0.off_diagonal(k) {
            if c < k {
                kl = kl.max(k - c);
            } else {
                ku = ku.max(c - k);
            }
        }
    }
    let mut m = BandedMatrix::zeros(n, kl, ku);
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        if grid.is_boundary_node(k) {
            m.add(k, k, 1.0)?;
            rhs[k] = vals[k];
        } else {
            m.add(k, k, l0.diag(k))?;
            for (j, w) in l0.off_diagonal(k) {
                m.add(k, j, w)?;
            }
            rhs[k] = -source[k];
        }
    }
    let frozen = m.factorize()?.solve(&rhs);
    let sup_gap =
        (0..n).filter(|&k| !grid.is_boundary_node(k)).map(|k| (frozen[k] - vals[k]).abs()).fold(0.0, f64::max);
    Ok(FrozenSolution { value: GridFunction::new(grid.clone(), frozen)?, source, sup_gap })
}

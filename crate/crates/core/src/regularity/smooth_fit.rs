//! Smooth fit of the value function against the obstacle along the free
//! boundary.

use serde::{Deserialize, Serialize};

use super::{DirectionKind, RangeBasis};
use crate::error::{Error, Result};
use crate::lattice::{Grid, GridFunction, Side};
use crate::problems::ProblemSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionGap {
    pub direction: Vec<f64>,
    pub kind: DirectionKind,
    pub slope_plus: f64,
    pub slope_minus: f64,
    /// `None` when the obstacle is kinked along a kernel direction.
    pub obstacle_slope: Option<f64>,
    /// `max(|s+ - D_h g|, |s- - D_h g|)`.
    pub gap: Option<f64>,
    /// Only range directions are judged.
    pub judged: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothFitReport {
    pub point: Vec<f64>,
    pub node: usize,
    pub value_gap: f64,
    pub tol_value: f64,
    pub tol_deriv: f64,
    pub directions: Vec<DirectionGap>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub point: Vec<f64>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothFitOutcome {
    pub reports: Vec<SmoothFitReport>,
    pub skipped: Vec<SkippedPoint>,
}

impl SmoothFitOutcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }
}

/// Nodes of `region` with an axis neighbour outside it, excluding the
/// near-boundary layer.
pub fn free_boundary_nodes(grid: &Grid, region: &[bool]) -> Vec<usize> {
    (0..grid.node_count())
        .filter(|&k| region[k])
        .filter(|&k| {
            (0..grid.dim()).any(|axis| [-1, 1].iter().any(|&o| grid.neighbor(k, axis, o).is_some_and(|j| !region[j])))
        })
        .filter(|&k| !grid.is_near_boundary(&grid.node(k)))
        .collect()
}

/// Compares `V` and its one-sided slopes with the obstacle and its
/// derivative at every free-boundary node of `region`.
pub fn smooth_fit_check<F>(
    v: &GridFunction,
    problem: &ProblemSpec,
    region: &[bool],
    basis_field: F,
    tol_value: f64,
    tol_deriv: f64,
) -> Result<SmoothFitOutcome>
where
    F: Fn(&[f64]) -> Result<RangeBasis>,
{
    let grid = v.grid();
    if region.len() != grid.node_count() {
        return Err(Error::DimensionMismatch("region mask length differs from node count".into()));
    }
    if !(tol_value > 0.0 && tol_deriv > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerances > 0 required, got tol_value = {tol_value}, tol_deriv = {tol_deriv}"
        )));
    }
    let obstacle = problem
        .obstacle
        .as_ref()
        .ok_or_else(|| Error::InvalidProblem("smooth fit needs an obstacle expression".into()))?;
    let mut out = SmoothFitOutcome::default();
    for k in free_boundary_nodes(grid, region) {
        let x = grid.node(k);
        let basis = basis_field(&x)?;
        let directions: Vec<(Vec<f64>, DirectionKind)> = basis
            .basis
            .iter()
            .map(|h| (h.clone(), DirectionKind::Range))
            .chain(basis.kernel.iter().map(|h| (h.clone(), DirectionKind::Kernel)))
            .collect();
        let mut gaps = Vec::with_capacity(directions.len());
        let mut skipped = None;
        for (h, kind) in directions {
            let judged = kind == DirectionKind::Range;
            let dg = match obstacle.eval_directional(&x, &h, &[]) {
                Ok((_, dg)) => Some(dg),
                Err(e @ Error::NotDifferentiable { .. }) if judged => {
                    skipped = Some(e.to_string());
                    break;
                }
                Err(Error::NotDifferentiable { .. }) => None,
                Err(e) => return Err(e),
            };
            let steps = grid.default_steps(&h);
            let slopes = v
                .one_sided_directional_derivative(&x, &h, Side::Plus, &steps)
                .and_then(|p| Ok((p, v.one_sided_directional_derivative(&x, &h, Side::Minus, &steps)?)));
            let (plus, minus) = match slopes {
                Ok(s) => s,
                Err(e @ Error::StepEscapesBox { .. }) => {
                    skipped = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            };
            let gap = dg.map(|dg| (plus - dg).abs().max((minus - dg).abs()));
            gaps.push(DirectionGap {
                direction: h,
                kind,
                slope_plus: plus,
                slope_minus: minus,
                obstacle_slope: dg,
                gap,
                judged,
                passed: !judged || gap.is_some_and(|g| g <= tol_deriv),
            });
        }
        if let Some(reason) = skipped {
            out.skipped.push(SkippedPoint { point: x, reason });
            continue;
        }
        let value_gap = (v.values()[k] - obstacle.eval(&x, &[])?).abs();
        let passed = value_gap <= tol_value && gaps.iter().all(|g| g.passed);
        out.reports.push(SmoothFitReport {
            point: x,
            node: k,
            value_gap,
            tol_value,
            tol_deriv,
            directions: gaps,
            passed,
        });
    }
    Ok(out)
}

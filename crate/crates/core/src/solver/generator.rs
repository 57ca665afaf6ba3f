//! Monotone finite-difference discretisation of the controlled generator.
//!
//! Interior rows use upwind first differences for each drift vector, central
//! second differences for the diagonal of `sigma sigma^T`, and the
//! positive/negative wide-stencil split for mixed derivatives.
//!
//! Rows on the outermost layer need an artificial boundary rule. Along a
//! face normal with diffusion, the solution is assumed to follow the mode of
//! the one-dimensional normal operator that decays away from the box: with
//! `s` the outward distance, `W(s) = u(x + s n)` and `r = W'/W` solving the
//! Riccati equation `1/2 A (r' + r^2) + b r - rho = 0`, the normal part of
//! the generator equals `(rho / r) W'`. The rate `r` at the face is obtained
//! by marching that equation inwards from far outside (backward Euler, which
//! always keeps the decaying root). Without normal diffusion, the drift is
//! upwinded, or differenced inwards when it points out of the box. Mixed
//! derivatives at the face reuse the nearest stencil that fits. Boundary rows
//! are flagged and excluded from the monotonicity check.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lattice::Grid;
use crate::problems::ProblemSpec;

/// Off-diagonal weights below `-MONO_SLACK * row scale` count as violations.
const MONO_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct DiscreteGenerator {
    #[serde(skip)]
    grid: Grid,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    diag: Vec<f64>,
    boundary: Vec<bool>,
}

/// One assembled row: diagonal weight plus off-diagonal `(column, weight)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub diag: f64,
    pub entries: Vec<(usize, f64)>,
    /// Magnitude of the largest mixed-derivative coefficient seen on this row.
    pub cross: f64,
}

impl Row {
    pub fn apply(&self, node: usize, u: &[f64]) -> f64 {
        self.diag * u[node] + self.entries.iter().map(|(c, w)| w * u[*c]).sum::<f64>()
    }
}

/// Pointwise coefficients feeding one row.
pub struct LocalCoefficients<'a> {
    /// Drift vectors, each upwinded on its own sign.
    pub drifts: &'a [&'a [f64]],
    pub diffusion: &'a DMatrix<f64>,
    pub rho: f64,
    /// Per axis, the far-field coefficient `rho / r` when the node sits on a
    /// face of that axis with normal diffusion; empty for interior rows.
    pub far_field: &'a [Option<f64>],
}

fn centred(k: usize, points: usize) -> usize {
    k.clamp(1, points - 2)
}

/// Assembles the row of node `flat`.
pub fn assemble_row(grid: &Grid, flat: usize, coeff: &LocalCoefficients<'_>) -> Row {
    let n = grid.dim();
    let h = grid.spacing();
    let pts = grid.points();
    let multi = grid.multi_index(flat);
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    let mut add = |col: usize, w: f64| {
        if w != 0.0 {
            *acc.entry(col).or_insert(0.0) += w;
        }
    };
    let mut cross_mag: f64 = 0.0;

    let far = |i: usize| coeff.far_field.get(i).copied().flatten();
    for (i, kappa) in (0..n).filter_map(|i| far(i).map(|k| (i, k))) {
        let inward = grid.neighbor(flat, i, 1).or_else(|| grid.neighbor(flat, i, -1)).expect("axis has neighbours");
        add(flat, kappa / h[i]);
        add(inward, -kappa / h[i]);
    }
    for drift in coeff.drifts {
        for (i, &b) in drift.iter().enumerate() {
            if b == 0.0 || far(i).is_some() {
                continue;
            }
            let w = b.abs() / h[i];
            let fwd = grid.neighbor(flat, i, 1);
            let bwd = grid.neighbor(flat, i, -1);
            match (b > 0.0, fwd, bwd) {
                (true, Some(f), _) => {
                    add(f, w);
                    add(flat, -w);
                }
                (true, None, Some(bk)) => {
                    // outward drift at the upper face: inward difference
                    add(flat, w);
                    add(bk, -w);
                }
                (false, _, Some(bk)) => {
                    add(bk, w);
                    add(flat, -w);
                }
                (false, Some(f), None) => {
                    add(flat, w);
                    add(f, -w);
                }
                _ => unreachable!("grid axes have at least three points"),
            }
        }
    }

    let a = coeff.diffusion;
    for i in 0..n {
        let aii = a[(i, i)];
        if aii == 0.0 || far(i).is_some() {
            continue;
        }
        let mut centre = multi.clone();
        centre[i] = centred(multi[i], pts[i]);
        let c = grid.flat_index(&centre);
        let w = 0.5 * aii / (h[i] * h[i]);
        add(c - grid.strides()[i], w);
        add(c + grid.strides()[i], w);
        add(c, -2.0 * w);
    }
    for i in 0..n {
        for j in i + 1..n {
            let cij = 0.5 * (a[(i, j)] + a[(j, i)]);
            if cij == 0.0 {
                continue;
            }
            cross_mag = cross_mag.max(cij.abs());
            let mut centre = multi.clone();
            centre[i] = centred(multi[i], pts[i]);
            centre[j] = centred(multi[j], pts[j]);
            let c = grid.flat_index(&centre);
            let (si, sj) = (grid.strides()[i], grid.strides()[j]);
            let w = cij.abs() / (2.0 * h[i] * h[j]);
            if cij > 0.0 {
                add(c + si + sj, w);
                add(c - si - sj, w);
            } else {
                add(c + si - sj, w);
                add(c - si + sj, w);
            }
            add(c + si, -w);
            add(c - si, -w);
            add(c + sj, -w);
            add(c - sj, -w);
            add(c, 2.0 * w);
        }
    }
    add(flat, -coeff.rho);

    let diag = acc.remove(&flat).unwrap_or(0.0);
    Row { diag, entries: acc.into_iter().filter(|(_, w)| *w != 0.0).collect(), cross: cross_mag }
}

impl DiscreteGenerator {
    pub fn from_rows(grid: &Grid, rows: Vec<Row>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut diag = Vec::with_capacity(rows.len());
        offsets.push(0);
        for r in rows {
            diag.push(r.diag);
            for (c, w) in r.entries {
                cols.push(c);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        let boundary = (0..diag.len()).map(|k| grid.is_boundary_node(k)).collect();
        DiscreteGenerator { grid: grid.clone(), offsets, cols, weights, diag, boundary }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self, k: usize) -> f64 {
        self.diag[k]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.boundary[k]
    }

    pub fn off_diagonal(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[k]..self.offsets[k + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn row(&self, k: usize) -> Row {
        Row { diag: self.diag[k], entries: self.off_diagonal(k).collect(), cross: 0.0 }
    }

    pub fn apply_row(&self, k: usize, u: &[f64]) -> f64 {
        self.diag[k] * u[k] + self.off_diagonal(k).map(|(c, w)| w * u[c]).sum::<f64>()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|k| self.apply_row(k, u)).collect()
    }

    /// Most negative off-diagonal weight over interior rows, with its node.
    pub fn worst_interior_weight(&self) -> Option<(usize, f64)> {
        let mut worst: Option<(usize, f64)> = None;
        for k in 0..self.len() {
            if self.boundary[k] {
                continue;
            }
            for (_, w) in self.off_diagonal(k) {
                if worst.is_none_or(|(_, v)| w < v) {
                    worst = Some((k, w));
                }
            }
        }
        worst
    }
}

/// Assembles rows for every node, failing on interior monotonicity violations.
pub(crate) fn assemble<F>(grid: &Grid, exec: Execution, local: F) -> Result<DiscreteGenerator>
where
    F: Fn(usize, &[f64]) -> Result<Row> + Sync + Send,
{
    let rows = exec::try_map_range(exec, grid.node_count(), |k| {
        let x = grid.node(k);
        let row = local(k, &x)?;
        if !grid.is_boundary_node(k) {
            let scale = row.diag.abs().max(1.0);
            if let Some((_, w)) = row.entries.iter().copied().find(|(_, w)| *w < -MONO_SLACK * scale) {
                return Err(Error::Monotonicity { node: k, weight: w, cross: row.cross });
            }
        }
        Ok(row)
    })?;
    Ok(DiscreteGenerator::from_rows(grid, rows))
}

/// Generator of the control with index `control` (drift, diffusion and
/// discount; the running reward is kept separately).
///
/// With a declared drift split, `beta0` and `beta1` are upwinded separately.
pub fn discretize(problem: &ProblemSpec, grid: &Grid, control: usize, exec: Execution) -> Result<DiscreteGenerator> {
    let a = problem.control_set.get(control);
    assemble(grid, exec, |k, x| {
        let diffusion = problem.diffusion(x, a)?;
        let rho = problem.rho(x, a)?;
        let drifts = match (problem.beta0(x), problem.beta1(x, a)) {
            (Some(b0), Some(b1)) => vec![b0?, b1?],
            _ => vec![problem.beta(x, a)?],
        };
        let drifts: Vec<&[f64]> = drifts.iter().map(Vec::as_slice).collect();
        let far_field = far_field(problem, grid, k, x, a, &diffusion);
        Ok(assemble_row(
            grid,
            k,
            &LocalCoefficients { drifts: &drifts, diffusion: &diffusion, rho, far_field: &far_field },
        ))
    })
}

/// Outward marching length, in units of the box extent along the axis.
const FAR_FIELD_LENGTH: f64 = 10.0;
const FAR_FIELD_STEPS: usize = 2000;

/// Negative root of `1/2 A r^2 + b r - rho = 0` (`A > 0`).
fn decaying_root(a: f64, b: f64, rho: f64) -> f64 {
    let d = (b * b + 2.0 * a * rho).sqrt();
    if b <= 0.0 {
        -2.0 * rho / (d - b)
    } else {
        (-b - d) / a
    }
}

/// Normal coefficients `(A_ii, outward drift, rho)` at `x + s * dir * e_i`.
fn normal_coefficients(
    problem: &ProblemSpec,
    x: &[f64],
    a: &[f64],
    axis: usize,
    dir: f64,
    s: f64,
) -> Option<(f64, f64, f64)> {
    let mut y = x.to_vec();
    y[axis] += dir * s;
    let sigma = problem.sigma(&y, a).ok()?;
    let aii = sigma.row(axis).norm_squared();
    let b = dir * problem.beta(&y, a).ok()?[axis];
    let rho = problem.rho(&y, a).ok()?;
    (aii.is_finite() && b.is_finite() && rho.is_finite()).then_some((aii, b, rho))
}

/// Far-field coefficient `rho / r` on the face of `axis` through `x`, where
/// `r` is the decaying log-derivative of the normal mode.
pub fn far_field_coefficient(
    problem: &ProblemSpec,
    grid: &Grid,
    x: &[f64],
    a: &[f64],
    axis: usize,
    dir: f64,
) -> Option<f64> {
    let (a0, b0, rho0) = normal_coefficients(problem, x, a, axis, dir, 0.0)?;
    if a0 <= 0.0 {
        return None;
    }
    let frozen = |a: f64, b: f64, rho: f64| if rho > 0.0 { rho / decaying_root(a, b, rho) } else { b.min(0.0) };
    if rho0 <= 0.0 {
        return Some(frozen(a0, b0, rho0));
    }
    let length = FAR_FIELD_LENGTH * (grid.upper()[axis] - grid.lower()[axis]);
    let ds = length / FAR_FIELD_STEPS as f64;
    let mut r: Option<f64> = None;
    for step in (0..=FAR_FIELD_STEPS).rev() {
        let c = normal_coefficients(problem, x, a, axis, dir, step as f64 * ds).filter(|c| c.0 > 0.0 && c.2 > 0.0);
        r = match (c, r) {
            (None, _) => None,
            (Some((aa, b, rho)), None) => Some(decaying_root(aa, b, rho)),
            (Some((aa, b, rho)), Some(prev)) => {
                // backward Euler towards the face; of the two roots of
                // ds r^2 + bb r + cc = 0 exactly one is negative
                let bb = 2.0 * ds * b / aa - 1.0;
                let cc = prev - 2.0 * ds * rho / aa;
                let disc = (bb * bb - 4.0 * ds * cc).sqrt();
                let next = if bb > 0.0 { (-bb - disc) / (2.0 * ds) } else { 2.0 * cc / (disc - bb) };
                next.is_finite().then_some(next)
            }
        };
    }
    match r {
        Some(r) if r < 0.0 => Some(rho0 / r),
        _ => Some(frozen(a0, b0, rho0)),
    }
}

/// Far-field coefficients for every axis on whose face node `k` sits.
fn far_field(
    problem: &ProblemSpec,
    grid: &Grid,
    k: usize,
    x: &[f64],
    a: &[f64],
    diffusion: &DMatrix<f64>,
) -> Vec<Option<f64>> {
    if !grid.is_boundary_node(k) {
        return Vec::new();
    }
    let multi = grid.multi_index(k);
    (0..grid.dim())
        .map(|i| {
            let dir = if multi[i] == 0 {
                -1.0
            } else if multi[i] + 1 == grid.points()[i] {
                1.0
            } else {
                return None;
            };
            if diffusion[(i, i)] <= 0.0 {
                return None;
            }
            far_field_coefficient(problem, grid, x, a, i, dir)
        })
        .collect()
}

/// Linear part `beta0 . D + 1/2 Tr(sigma sigma^T D^2) - rho` of a problem
/// with separable drift.
pub fn discretize_linear_part(problem: &ProblemSpec, grid: &Grid, exec: Execution) -> Result<DiscreteGenerator> {
    if problem.drift_split.is_none() {
        return Err(Error::InvalidProblem("linear part requires a drift split".into()));
    }
    let co = &problem.coefficients;
    if co.sigma.iter().flatten().any(|e| e.max_control_index() > 0) || co.rho.max_control_index() > 0 {
        return Err(Error::InvalidProblem("linear part requires sigma and rho independent of the control".into()));
    }
    let a0 = problem.control_set.get(0);
    assemble(grid, exec, |k, x| {
        let diffusion = problem.diffusion(x, a0)?;
        let rho = problem.rho(x, a0)?;
        let b0 = problem.beta0(x).expect("drift split present")?;
        let drifts: [&[f64]; 1] = [&b0];
        let far_field = far_field(problem, grid, k, x, a0, &diffusion);
        Ok(assemble_row(
            grid,
            k,
            &LocalCoefficients { drifts: &drifts, diffusion: &diffusion, rho, far_field: &far_field },
        ))
    })
}

//! Uniform tensor grids on boxes, grid functions with multilinear
//! interpolation, and finite-difference probes.
//!
//! Nodes are addressed by a multi-index `(k_0, .., k_{n-1})` and stored in
//! row-major order (last axis fastest). Node coordinates are always computed
//! as `lower[i] + k_i * spacing[i]`, never accumulated, so they are
//! reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Relative slack used when deciding whether a point lies in the box.
const BOX_SLACK: f64 = 1e-12;
/// Fractional cell offsets closer than this to a node snap onto the node.
const SNAP: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        if r.dim != r.lower.len() {
            return Err(Error::DimensionMismatch(format!("dim = {} but lower has {} entries", r.dim, r.lower.len())));
        }
        Grid::new(&r.lower, &r.upper, &r.points)
    }
}

impl From<Grid> for GridRepr {
    fn from(g: Grid) -> Self {
        GridRepr { dim: g.dim(), lower: g.lower, upper: g.upper, points: g.points }
    }
}

impl Grid {
    /// Builds a grid on the box `[lower, upper]` with `points[i]` nodes on axis `i`.
    pub fn new(lower: &[f64], upper: &[f64], points: &[usize]) -> Result<Self> {
        let n = lower.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("grid needs at least one axis".into()));
        }
        if upper.len() != n || points.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "lower has {} entries, upper {}, points {}",
                n,
                upper.len(),
                points.len()
            )));
        }
        for axis in 0..n {
            if !(lower[axis].is_finite() && upper[axis].is_finite()) || lower[axis] >= upper[axis] {
                return Err(Error::NonPositiveExtent { axis, lower: lower[axis], upper: upper[axis] });
            }
            if points[axis] < 3 {
                return Err(Error::TooFewPoints { axis, points: points[axis] });
            }
        }
        let spacing: Vec<f64> = (0..n).map(|i| (upper[i] - lower[i]) / (points[i] - 1) as f64).collect();
        let mut strides = vec![1usize; n];
        for i in (0..n - 1).rev() {
            strides[i] = strides[i + 1] * points[i + 1];
        }
        Ok(Grid { lower: lower.to_vec(), upper: upper.to_vec(), points: points.to_vec(), spacing, strides })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn node_count(&self) -> usize {
        self.points.iter().product()
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        self.lower[axis] + k as f64 * self.spacing[axis]
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        self.strides
            .iter()
            .map(|&s| {
                let k = rest / s;
                rest %= s;
                k
            })
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().enumerate().map(|(axis, &k)| self.coordinate(axis, k)).collect()
    }

    /// Flat index of the neighbour `offset` cells away along `axis`, if it exists.
    pub fn neighbor(&self, flat: usize, axis: usize, offset: isize) -> Option<usize> {
        let k = (flat / self.strides[axis]) % self.points[axis];
        let target = k as isize + offset;
        if target < 0 || target >= self.points[axis] as isize {
            return None;
        }
        Some((flat as isize + offset * self.strides[axis] as isize) as usize)
    }

    /// True when the node sits on the outermost layer of the grid.
    pub fn is_boundary_node(&self, flat: usize) -> bool {
        self.multi_index(flat).iter().zip(&self.points).any(|(&k, &p)| k == 0 || k + 1 == p)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(i, &xi)| {
                let slack = BOX_SLACK * (self.upper[i] - self.lower[i]);
                xi.is_finite() && xi >= self.lower[i] - slack && xi <= self.upper[i] + slack
            })
    }

    /// Distance from `x` to the nearest face of the box (negative outside).
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(i, &xi)| (xi - self.lower[i]).min(self.upper[i] - xi)).fold(f64::INFINITY, f64::min)
    }

    /// Points within two maximal spacings of the boundary are excluded from
    /// every regularity verdict.
    pub fn is_near_boundary(&self, x: &[f64]) -> bool {
        self.distance_to_boundary(x) < 2.0 * self.max_spacing()
    }

    /// Nearest node (componentwise rounding, clamped into the grid).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                let s = ((xi - self.lower[i]) / self.spacing[i]).round();
                s.clamp(0.0, (self.points[i] - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&multi)
    }

    /// Length of one grid cell measured along the unit direction `h`.
    pub fn projected_spacing(&self, h: &[f64]) -> f64 {
        let s: f64 = h.iter().zip(&self.spacing).map(|(hi, dx)| (hi / dx) * (hi / dx)).sum();
        1.0 / s.sqrt()
    }

    /// Default probe steps `{4b, 2b, b}` with `b` the projected spacing along `h`.
    pub fn default_steps(&self, h: &[f64]) -> Vec<f64> {
        let b = self.projected_spacing(h);
        vec![4.0 * b, 2.0 * b, b]
    }
}

/// Values of a scalar field on the nodes of a [`Grid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridFunctionRepr", into = "GridFunctionRepr")]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridFunctionRepr {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<GridFunctionRepr> for GridFunction {
    type Error = Error;

    fn try_from(r: GridFunctionRepr) -> Result<Self> {
        let grid = Grid::try_from(GridRepr { dim: r.dim, lower: r.lower, upper: r.upper, points: r.points })?;
        GridFunction::new(grid, r.values)
    }
}

impl From<GridFunction> for GridFunctionRepr {
    fn from(f: GridFunction) -> Self {
        let g = GridRepr::from(f.grid);
        GridFunctionRepr { dim: g.dim, lower: g.lower, upper: g.upper, points: g.points, values: f.values }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::DimensionMismatch(format!("{} values for {} nodes", values.len(), grid.node_count())));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at node {k}")));
        }
        Ok(GridFunction { grid, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64 + Sync + Send) -> Result<Self> {
        let values = exec::map_range(Execution::Parallel, grid.node_count(), |k| f(&grid.node(k)));
        GridFunction::new(grid.clone(), values)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction { grid: grid.clone(), values: vec![c; grid.node_count()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm_diff(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Multilinear interpolation; exact at nodes and for affine data.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        let g = &self.grid;
        if !g.contains(x) {
            return Err(Error::OutOfBox { point: x.to_vec() });
        }
        let n = g.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0f64; n];
        for i in 0..n {
            let last = g.points[i] - 1;
            let s = ((x[i] - g.lower[i]) / g.spacing[i]).clamp(0.0, last as f64);
            let r = s.round();
            if (s - r).abs() < SNAP {
                let k = r as usize;
                if k == last {
                    base[i] = last - 1;
                    frac[i] = 1.0;
                } else {
                    base[i] = k;
                    frac[i] = 0.0;
                }
            } else {
                let k = (s.floor() as usize).min(last - 1);
                base[i] = k;
                frac[i] = s - k as f64;
            }
        }
        let base_flat = g.flat_index(&base);
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut offset = 0usize;
            for i in 0..n {
                if corner >> i & 1 == 1 {
                    w *= frac[i];
                    offset += g.strides[i];
                } else {
                    w *= 1.0 - frac[i];
                }
            }
            if w != 0.0 {
                acc += w * self.values[base_flat + offset];
            }
        }
        Ok(acc)
    }

    /// One-sided directional derivative along the unit vector `h`.
    ///
    /// `Side::Plus` is the limit of `(f(x + s h) - f(x)) / s`, `Side::Minus`
    /// the limit of `(f(x) - f(x - s h)) / s`, both as `s -> 0+`. The limit is
    /// taken by polynomial (Neville) extrapolation to `s = 0` over `steps`,
    /// which must be positive and strictly decreasing.
    pub fn one_sided_directional_derivative(&self, x: &[f64], h: &[f64], side: Side, steps: &[f64]) -> Result<f64> {
        if steps.len() < 2 {
            return Err(Error::InvalidArgument("need at least two probe steps".into()));
        }
        if steps.iter().any(|s| !(*s > 0.0)) || steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("probe steps must be positive and strictly decreasing".into()));
        }
        if h.len() != x.len() || x.len() != self.grid.dim() {
            return Err(Error::DimensionMismatch("direction/point dimension differs from grid".into()));
        }
        let f0 = self.interpolate(x)?;
        let sign = match side {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        };
        let mut quotients = Vec::with_capacity(steps.len());
        for &s in steps {
            let y: Vec<f64> = x.iter().zip(h).map(|(xi, hi)| xi + sign * s * hi).collect();
            if !self.grid.contains(&y) {
                return Err(Error::StepEscapesBox { point: y });
            }
            let fy = self.interpolate(&y)?;
            quotients.push(sign * (fy - f0) / s);
        }
        Ok(extrapolate_to_zero(steps, &quotients))
    }

    /// Symmetric difference quotient `(f(x+bh) - f(x-bh)) / 2b` with `b` the
    /// projected spacing. Used as the plain gradient estimator.
    pub fn central_directional_derivative(&self, x: &[f64], h: &[f64]) -> Result<f64> {
        let b = self.grid.projected_spacing(h);
        let xp: Vec<f64> = x.iter().zip(h).map(|(xi, hi)| xi + b * hi).collect();
        let xm: Vec<f64> = x.iter().zip(h).map(|(xi, hi)| xi - b * hi).collect();
        if !self.grid.contains(&xp) {
            return Err(Error::StepEscapesBox { point: xp });
        }
        if !self.grid.contains(&xm) {
            return Err(Error::StepEscapesBox { point: xm });
        }
        Ok((self.interpolate(&xp)? - self.interpolate(&xm)?) / (2.0 * b))
    }
}

/// Neville's algorithm evaluated at zero: the value at `s = 0` of the
/// interpolating polynomial through `(steps[i], values[i])`.
pub fn extrapolate_to_zero(steps: &[f64], values: &[f64]) -> f64 {
    let mut p = values.to_vec();
    let n = p.len();
    for level in 1..n {
        for i in 0..n - level {
            let (si, sj) = (steps[i], steps[i + level]);
            p[i] = (sj * p[i] - si * p[i + 1]) / (sj - si);
        }
    }
    p[0]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StencilOrder {
    FirstForward,
    FirstBackward,
    FirstCentral,
    SecondCentral,
}

/// Axis-aligned difference quotient over `step_multiplier` grid cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stencil {
    pub order: StencilOrder,
    pub step_multiplier: usize,
}

impl Stencil {
    pub fn new(order: StencilOrder, step_multiplier: usize) -> Result<Self> {
        if step_multiplier == 0 {
            return Err(Error::InvalidArgument("stencil step multiplier must be >= 1".into()));
        }
        Ok(Stencil { order, step_multiplier })
    }

    /// Applies the stencil at node `flat` along `axis`; `None` when it would
    /// leave the grid.
    pub fn apply(&self, f: &GridFunction, flat: usize, axis: usize) -> Option<f64> {
        let g = f.grid();
        let m = self.step_multiplier as isize;
        let h = g.spacing()[axis] * self.step_multiplier as f64;
        let v = f.values();
        let at = |off: isize| g.neighbor(flat, axis, off).map(|k| v[k]);
        match self.order {
            StencilOrder::FirstForward => Some((at(m)? - v[flat]) / h),
            StencilOrder::FirstBackward => Some((v[flat] - at(-m)?) / h),
            StencilOrder::FirstCentral => Some((at(m)? - at(-m)?) / (2.0 * h)),
            StencilOrder::SecondCentral => Some((at(m)? - 2.0 * v[flat] + at(-m)?) / (h * h)),
        }
    }
}

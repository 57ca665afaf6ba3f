//! Numerical regularity checks: range bases of the diffusion, one-sided
//! directional derivatives, projected gradients and their continuity,
//! semiconvexity certificates, value bounds, smooth fit and the kink witness.

mod convexity;
mod smooth_fit;
mod witness;

pub use convexity::{
    check_value_bounds, fit_bound_constant, semiconvexity_constant, BoundCheck, SemiconvexityCertificate, Triple,
    ValueBoundsReport, DEFAULT_SEMICONVEXITY_SAMPLES,
};
pub use smooth_fit::{
    free_boundary_nodes, smooth_fit_check, DirectionGap, SkippedPoint, SmoothFitOutcome, SmoothFitReport,
};
pub use witness::{kink_witness, KinkWitness, WitnessOperator};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lattice::{Grid, GridFunction, Side};
use crate::problems::ProblemSpec;

/// Relative rank threshold: singular values below `DEFAULT_TAU_RANK * s_max`
/// are dropped.
pub const DEFAULT_TAU_RANK: f64 = 1e-8;

/// Number of random unit combinations of range directions probed per point.
pub const RANGE_COMBINATIONS: usize = 3;

/// Axis-aligned sub-box of the grid box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch("region bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument(format!("region lower {lower:?} exceeds upper {upper:?}")));
        }
        Ok(Region { lower, upper })
    }

    pub fn whole(grid: &Grid) -> Self {
        Region { lower: grid.lower().to_vec(), upper: grid.upper().to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, &xi)| xi >= self.lower[i] && xi <= self.upper[i])
    }

    /// Fails with [`Error::OutOfBox`] naming the first corner outside `grid`.
    pub fn check_inside(&self, grid: &Grid) -> Result<()> {
        if self.dim() != grid.dim() {
            return Err(Error::DimensionMismatch(format!("region has dimension {}, grid {}", self.dim(), grid.dim())));
        }
        for corner in [&self.lower, &self.upper] {
            if !grid.contains(corner) {
                return Err(Error::OutOfBox { point: corner.clone() });
            }
        }
        Ok(())
    }

    pub(crate) fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| l + (u - l) * rng.random::<f64>()).collect()
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm(&v);
        if r > 1e-12 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}

/// Orthonormal basis of the span of a set of columns, with its complement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeBasis {
    pub x: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub kernel: Vec<Vec<f64>>,
    /// All `n` singular values, descending.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    /// Rank obtained from every other control only.
    pub rank_half_controls: usize,
}

impl RangeBasis {
    /// Basis of the column span of `columns` (`n` rows). The rank may be zero.
    pub fn from_columns(x: &[f64], columns: &DMatrix<f64>, tau_rank: f64) -> Result<Self> {
        let n = columns.nrows();
        let (singular_values, u) = sorted_svd(columns);
        let s_max = singular_values[0];
        let threshold = tau_rank * s_max;
        let rank = if s_max > 0.0 { singular_values.iter().filter(|&&s| s > threshold).count() } else { 0 };
        let mut basis = Vec::with_capacity(rank);
        let mut kernel = Vec::with_capacity(n - rank);
        for (k, col) in u.into_iter().enumerate() {
            if k < rank {
                basis.push(col);
            } else {
                kernel.push(col);
            }
        }
        Ok(RangeBasis { x: x.to_vec(), basis, kernel, singular_values, threshold, rank_half_controls: rank })
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn projector(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut p = DMatrix::zeros(n, n);
        for h in &self.basis {
            for i in 0..n {
                for j in 0..n {
                    p[(i, j)] += h[i] * h[j];
                }
            }
        }
        p
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for h in &self.basis {
            let c: f64 = h.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, hi) in out.iter_mut().zip(h) {
                *o += c * hi;
            }
        }
        out
    }

    /// Smallest retained and largest dropped singular value.
    pub fn singular_gap(&self) -> (Option<f64>, Option<f64>) {
        let r = self.rank();
        (r.checked_sub(1).map(|k| self.singular_values[k]), self.singular_values.get(r).copied())
    }
}

/// Singular values (descending, length `n`) and the matching left singular
/// vectors, completed to a full orthonormal basis.
fn sorted_svd(columns: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = columns.nrows();
    let width = columns.ncols().max(n);
    let mut m = DMatrix::zeros(n, width);
    m.view_mut((0, 0), (n, columns.ncols())).copy_from(columns);
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&k| svd.singular_values[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut col: Vec<f64> = u.column(k).iter().copied().collect();
            // sign convention: largest component positive
            let lead = col.iter().copied().fold(0.0f64, |acc, c| if c.abs() > acc.abs() { c } else { acc });
            if lead < 0.0 {
                col.iter_mut().for_each(|c| *c = -*c);
            }
            col
        })
        .collect();
    (values, vectors)
}

fn stacked_sigma(problem: &ProblemSpec, x: &[f64], controls: impl Iterator<Item = usize>) -> Result<DMatrix<f64>> {
    let mut cols: Vec<f64> = Vec::new();
    let n = problem.n();
    let mut count = 0;
    for c in controls {
        let s = problem.sigma(x, problem.control_set.get(c))?;
        cols.extend(s.iter());
        count += s.ncols();
    }
    Ok(DMatrix::from_vec(n, count, cols))
}

/// Basis of `R(x) = Span{range(sigma(x, a))}` over the sampled controls.
/// Fails with [`Error::TrivialRange`] when every singular value vanishes.
pub fn range_basis(problem: &ProblemSpec, x: &[f64], tau_rank: f64) -> Result<RangeBasis> {
    if !(tau_rank > 0.0 && tau_rank < 1.0) {
        return Err(Error::InvalidArgument(format!("tau_rank must lie in (0, 1), got {tau_rank}")));
    }
    if x.len() != problem.n() {
        return Err(Error::DimensionMismatch(format!("point has dimension {}, problem {}", x.len(), problem.n())));
    }
    let all = stacked_sigma(problem, x, 0..problem.control_set.len())?;
    let mut basis = RangeBasis::from_columns(x, &all, tau_rank)?;
    if basis.rank() == 0 {
        return Err(Error::TrivialRange { point: x.to_vec() });
    }
    let half = stacked_sigma(problem, x, (0..problem.control_set.len()).step_by(2))?;
    basis.rank_half_controls = RangeBasis::from_columns(x, &half, tau_rank)?.rank();
    Ok(basis)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Range,
    Kernel,
    RangeCombination,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Smooth,
    Kink,
    NearBoundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalReport {
    pub x: Vec<f64>,
    pub direction: Vec<f64>,
    pub kind: DirectionKind,
    pub slope_plus: Option<f64>,
    pub slope_minus: Option<f64>,
    pub jump: Option<f64>,
    pub tol_jump: f64,
    pub classification: Classification,
    /// `|s+(-h) + s-(h)| + |s-(-h) + s+(h)|`; zero up to rounding.
    pub reflection_error: Option<f64>,
}

impl DirectionalReport {
    /// A kink along a range direction, where smoothness is expected.
    pub fn is_range_violation(&self) -> bool {
        self.kind != DirectionKind::Kernel && self.classification == Classification::Kink
    }

    /// Largest one-sided slope magnitude.
    pub fn derivative_scale(&self) -> f64 {
        self.slope_plus.unwrap_or(0.0).abs().max(self.slope_minus.unwrap_or(0.0).abs())
    }
}

/// `5 * max_spacing * max(1, |v(x)|, |s+|, |s-|)`.
pub fn default_tol_jump(grid: &Grid, value: f64, slopes: &[f64]) -> f64 {
    let scale = slopes.iter().fold(1.0f64.max(value.abs()), |acc, s| acc.max(s.abs()));
    5.0 * grid.max_spacing() * scale
}

fn slopes(v: &GridFunction, x: &[f64], h: &[f64], step_scale: f64) -> Result<(f64, f64)> {
    let steps: Vec<f64> = v.grid().default_steps(h).into_iter().map(|s| s * step_scale).collect();
    let plus = v.one_sided_directional_derivative(x, h, Side::Plus, &steps)?;
    let minus = v.one_sided_directional_derivative(x, h, Side::Minus, &steps)?;
    Ok((plus, minus))
}

fn probe(
    v: &GridFunction,
    x: &[f64],
    h: &[f64],
    kind: DirectionKind,
    tol_jump: Option<f64>,
) -> Result<DirectionalReport> {
    let grid = v.grid();
    let near = grid.is_near_boundary(x);
    let value = v.interpolate(x)?;
    let attempt = |dir: &[f64]| match slopes(v, x, dir, 1.0) {
        Ok(s) => Ok(Some(s)),
        Err(Error::StepEscapesBox { .. }) if near => Ok(None),
        Err(e) => Err(e),
    };
    let forward = attempt(h)?;
    let back: Vec<f64> = h.iter().map(|c| -c).collect();
    let backward = attempt(&back)?;
    let (slope_plus, slope_minus) = (forward.map(|s| s.0), forward.map(|s| s.1));
    let jump = forward.map(|(p, m)| p - m);
    let reflection_error = forward.zip(backward).map(|((p, m), (bp, bm))| (bp + m).abs() + (bm + p).abs());
    let tol_jump = tol_jump.unwrap_or_else(|| {
        let s: Vec<f64> = forward.map(|(p, m)| vec![p, m]).unwrap_or_default();
        default_tol_jump(grid, value, &s)
    });
    let classification = match jump {
        _ if near => Classification::NearBoundary,
        Some(j) if j.abs() <= tol_jump => Classification::Smooth,
        _ => Classification::Kink,
    };
    Ok(DirectionalReport {
        x: x.to_vec(),
        direction: h.to_vec(),
        kind,
        slope_plus,
        slope_minus,
        jump,
        tol_jump,
        classification,
        reflection_error,
    })
}

/// One report per range direction, per kernel direction and per random unit
/// combination of range directions (seeded).
pub fn directional_smoothness(
    v: &GridFunction,
    x: &[f64],
    basis: &RangeBasis,
    tol_jump: Option<f64>,
    seed: u64,
) -> Result<Vec<DirectionalReport>> {
    if x.len() != v.grid().dim() || basis.dim() != x.len() {
        return Err(Error::DimensionMismatch("probe point, basis and grid dimensions differ".into()));
    }
    let mut out = Vec::new();
    for h in &basis.basis {
        out.push(probe(v, x, h, DirectionKind::Range, tol_jump)?);
    }
    for h in &basis.kernel {
        out.push(probe(v, x, h, DirectionKind::Kernel, tol_jump)?);
    }
    if basis.rank() > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..RANGE_COMBINATIONS {
            let c = random_unit(&mut rng, basis.rank());
            let mut h = vec![0.0; x.len()];
            for (ck, bk) in c.iter().zip(&basis.basis) {
                for (hi, bi) in h.iter_mut().zip(bk) {
                    *hi += ck * bi;
                }
            }
            let r = norm(&h);
            h.iter_mut().for_each(|hi| *hi /= r);
            out.push(probe(v, x, &h, DirectionKind::RangeCombination, tol_jump)?);
        }
    }
    Ok(out)
}

fn projected_gradient_scaled(
    v: &GridFunction,
    x: &[f64],
    basis: &RangeBasis,
    tol_jump: Option<f64>,
    step_scale: f64,
) -> Result<Vec<f64>> {
    let value = v.interpolate(x)?;
    let mut g = vec![0.0; x.len()];
    for h in &basis.basis {
        let (p, m) = slopes(v, x, h, step_scale)?;
        let tol = tol_jump.unwrap_or_else(|| default_tol_jump(v.grid(), value, &[p, m]));
        if (p - m).abs() > tol {
            return Err(Error::RangeKink { point: x.to_vec(), jump: p - m });
        }
        let slope = 0.5 * (p + m);
        for (gi, hi) in g.iter_mut().zip(h) {
            *gi += slope * hi;
        }
    }
    Ok(g)
}

/// `D_R v(x) = sum_k slope(h_k) h_k` over the orthonormal range basis. Fails
/// with [`Error::RangeKink`] when some range direction is not smooth.
pub fn projected_gradient(v: &GridFunction, x: &[f64], basis: &RangeBasis, tol_jump: Option<f64>) -> Result<Vec<f64>> {
    if x.len() != v.grid().dim() || basis.dim() != x.len() {
        return Err(Error::DimensionMismatch("probe point, basis and grid dimensions differ".into()));
    }
    projected_gradient_scaled(v, x, basis, tol_jump, 1.0)
}

/// Central-difference gradient along the coordinate axes.
pub fn central_gradient(v: &GridFunction, x: &[f64]) -> Result<Vec<f64>> {
    let n = v.grid().dim();
    (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            v.central_directional_derivative(x, &e)
        })
        .collect()
}

/// Index distance from the faces needed by the default probe steps
/// `{4b, 2b, b}`.
pub const PROBE_LAYER: usize = 4;

/// Grid nodes forming a `per_axis`-point lattice, skipping the near-boundary
/// layer and nodes whose default probe steps would leave the box.
pub fn probe_nodes(grid: &Grid, per_axis: usize) -> Vec<usize> {
    let per_axis = per_axis.max(1);
    let mut out = Vec::new();
    let axes: Vec<Vec<usize>> = grid
        .points()
        .iter()
        .map(|&p| {
            let mut ks: Vec<usize> = (1..=per_axis)
                .map(|i| i * (p - 1) / (per_axis + 1))
                .filter(|&k| k >= PROBE_LAYER && k + PROBE_LAYER < p)
                .collect();
            ks.dedup();
            ks
        })
        .collect();
    if axes.iter().any(Vec::is_empty) {
        return out;
    }
    let total: usize = axes.iter().map(Vec::len).product();
    for t in 0..total {
        let mut rem = t;
        let mut multi = vec![0; axes.len()];
        for (i, ks) in axes.iter().enumerate().rev() {
            multi[i] = ks[rem % ks.len()];
            rem /= ks.len();
        }
        let k = grid.flat_index(&multi);
        if !grid.is_near_boundary(&grid.node(k)) {
            out.push(k);
        }
    }
    out
}

/// Directional probes at every node of a probe lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSweep {
    pub reports: Vec<DirectionalReport>,
    /// Points without a usable range basis.
    pub skipped: Vec<SkippedPoint>,
    pub range_probes: usize,
    pub range_violations: usize,
    pub kernel_kinks: usize,
    /// Largest `|jump| / tol_jump` over judged range probes.
    pub worst_range_ratio: f64,
}

impl ProbeSweep {
    pub fn passed(&self) -> bool {
        self.range_violations == 0
    }
}

/// Runs [`directional_smoothness`] at each node of [`probe_nodes`]. Node `k`
/// uses seed `seed + k`.
pub fn probe_sweep(
    v: &GridFunction,
    problem: &ProblemSpec,
    per_axis: usize,
    tau_rank: f64,
    tol_jump: Option<f64>,
    seed: u64,
    exec: Execution,
) -> Result<ProbeSweep> {
    let grid = v.grid();
    if grid.dim() != problem.n() {
        return Err(Error::DimensionMismatch("value grid and problem dimensions differ".into()));
    }
    let nodes = probe_nodes(grid, per_axis);
    let per_node = exec::try_map_range(exec, nodes.len(), |i| {
        let k = nodes[i];
        let x = grid.node(k);
        match range_basis(problem, &x, tau_rank) {
            Ok(b) => directional_smoothness(v, &x, &b, tol_jump, seed.wrapping_add(k as u64)).map(Ok),
            Err(Error::TrivialRange { point }) => Ok(Err(SkippedPoint { point, reason: "trivial range".into() })),
            Err(e) => Err(e),
        }
    })?;
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for r in per_node {
        match r {
            Ok(rs) => reports.extend(rs),
            Err(s) => skipped.push(s),
        }
    }
    let range: Vec<&DirectionalReport> = reports.iter().filter(|r| r.kind != DirectionKind::Kernel).collect();
    let worst_range_ratio = range.iter().filter_map(|r| r.jump.map(|j| j.abs() / r.tol_jump)).fold(0.0, f64::max);
    Ok(ProbeSweep {
        range_probes: range.len(),
        range_violations: range.iter().filter(|r| r.is_range_violation()).count(),
        kernel_kinks: reports
            .iter()
            .filter(|r| r.kind == DirectionKind::Kernel && r.classification == Classification::Kink)
            .count(),
        worst_range_ratio,
        reports,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub region: Region,
    pub rank: usize,
    pub deltas: Vec<f64>,
    /// `max |D_S v(x) - D_S v(y)|` over sampled pairs with `|x - y| = delta`.
    pub modulus: Vec<f64>,
    pub pairs: Vec<usize>,
    /// Largest change of the projected gradient when the probe steps double.
    pub noise_floor: f64,
    /// Each modulus is below its predecessor or already at the noise floor.
    pub decreasing: bool,
}

/// Empirical modulus of continuity of the projected gradient over a ladder of
/// separations `deltas`, from `n_pairs` seeded pairs per separation.
pub fn gradient_continuity<F>(
    v: &GridFunction,
    region: &Region,
    basis_field: F,
    deltas: &[f64],
    n_pairs: usize,
    seed: u64,
) -> Result<ContinuityReport>
where
    F: Fn(&[f64]) -> Result<RangeBasis> + Sync,
{
    let grid = v.grid();
    region.check_inside(grid)?;
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) || n_pairs == 0 {
        return Err(Error::InvalidArgument("need positive deltas and at least one pair".into()));
    }
    let mut deltas = deltas.to_vec();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = Vec::with_capacity(n_pairs);
    let mut attempts = 0;
    while anchors.len() < n_pairs {
        attempts += 1;
        if attempts > 1000 * n_pairs {
            return Err(Error::InvalidArgument("region lies inside the near-boundary layer".into()));
        }
        let x = region.sample(&mut rng);
        if !grid.is_near_boundary(&x) {
            anchors.push(x);
        }
    }
    let dirs: Vec<Vec<f64>> = (0..n_pairs).map(|_| random_unit(&mut rng, grid.dim())).collect();

    let anchor_bases = exec::try_map_range(Execution::default(), n_pairs, |i| basis_field(&anchors[i]))?;
    let rank = anchor_bases[0].rank();
    let check_rank = |b: &RangeBasis| {
        if b.rank() != rank {
            Err(Error::RankJump { point: b.x.clone(), expected: rank, found: b.rank() })
        } else {
            Ok(())
        }
    };
    for b in &anchor_bases {
        check_rank(b)?;
    }
    let anchor_grads = exec::try_map_range(Execution::default(), n_pairs, |i| {
        projected_gradient(v, &anchors[i], &anchor_bases[i], None)
    })?;
    let noise = exec::try_map_range(Execution::default(), n_pairs, |i| {
        let coarse = projected_gradient_scaled(v, &anchors[i], &anchor_bases[i], None, 2.0)?;
        Ok::<f64, Error>(max_abs_diff(&coarse, &anchor_grads[i]))
    })?;
    let noise_floor = noise.into_iter().fold(0.0, f64::max);

    let mut modulus = Vec::with_capacity(deltas.len());
    let mut pairs = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let diffs = exec::try_map_range(Execution::default(), n_pairs, |i| {
            let x = &anchors[i];
            let step = |sign: f64| -> Vec<f64> { x.iter().zip(&dirs[i]).map(|(a, d)| a + sign * delta * d).collect() };
            let y = [step(1.0), step(-1.0)].into_iter().find(|y| region.contains(y) && !grid.is_near_boundary(y));
            let Some(y) = y else { return Ok(None) };
            let b = basis_field(&y)?;
            check_rank(&b)?;
            let gy = projected_gradient(v, &y, &b, None)?;
            Ok::<Option<f64>, Error>(Some(max_abs_diff(&gy, &anchor_grads[i])))
        })?;
        let used: Vec<f64> = diffs.into_iter().flatten().collect();
        pairs.push(used.len());
        modulus.push(used.into_iter().fold(0.0, f64::max));
    }
    let decreasing = modulus.windows(2).all(|w| w[1] < w[0] || w[0] <= noise_floor);
    Ok(ContinuityReport { region: region.clone(), rank, deltas, modulus, pairs, noise_floor, decreasing })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

//! Semiconvexity certificates and growth/Lipschitz/semiconvexity bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{norm, Region};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lattice::GridFunction;

pub const DEFAULT_SEMICONVEXITY_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
}

impl Triple {
    fn mix(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| self.lambda * a + (1.0 - self.lambda) * b).collect()
    }

    fn weight(&self) -> f64 {
        let d: Vec<f64> = self.x.iter().zip(&self.y).map(|(a, b)| a - b).collect();
        let r = norm(&d);
        self.lambda * (1.0 - self.lambda) * r * r
    }

    /// Midpoint excess; values at rounding level are reported as zero.
    fn excess(&self, v: &GridFunction) -> Result<f64> {
        let (vm, vx, vy) = (v.interpolate(&self.mix())?, v.interpolate(&self.x)?, v.interpolate(&self.y)?);
        let e = vm - self.lambda * vx - (1.0 - self.lambda) * vy;
        let noise = 16.0 * f64::EPSILON * (vm.abs() + vx.abs() + vy.abs());
        Ok(if e.abs() <= noise { 0.0 } else { e })
    }
}

fn draw_triple(rng: &mut impl Rng, region: &Region) -> Triple {
    let x = region.sample(rng);
    let y = region.sample(rng);
    let lambda = loop {
        let l: f64 = rng.random();
        if l > 0.0 {
            break l;
        }
    };
    Triple { x, y, lambda }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiconvexityCertificate {
    pub region: Region,
    /// `max [v(lx + (1-l)y) - l v(x) - (1-l) v(y)] / [l(1-l)|x-y|^2]`, floored at 0.
    pub c_r_estimate: f64,
    /// `2 c_R`, the curvature in `v = v0 - (kappa/2)|y|^2` with `v0` convex.
    pub kappa: f64,
    /// Same maximum with the interpolation error bound subtracted from each
    /// excess; a lower estimate for the function behind the grid values.
    pub c_r_lower: f64,
    pub samples: usize,
    pub worst: Option<Triple>,
    /// Bound on the numerator error caused by multilinear interpolation,
    /// `(1/4) sum_i max |second difference along axis i|`.
    pub interpolation_excess_bound: f64,
}

pub fn semiconvexity_constant(
    v: &GridFunction,
    region: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<SemiconvexityCertificate> {
    region.check_inside(v.grid())?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<Triple> = (0..n_samples).map(|_| draw_triple(&mut rng, region)).collect();
    let bound = interpolation_excess_bound(v);
    let ratios = exec::try_map_range(Execution::default(), n_samples, |i| {
        let t = &triples[i];
        let w = t.weight();
        if w <= 0.0 {
            return Ok((f64::NEG_INFINITY, f64::NEG_INFINITY));
        }
        let e = t.excess(v)?;
        Ok::<(f64, f64), Error>((e / w, (e - bound) / w))
    })?;
    let mut worst = None;
    let mut best = f64::NEG_INFINITY;
    let mut lower = f64::NEG_INFINITY;
    for (i, (r, l)) in ratios.iter().enumerate() {
        if *r > best {
            best = *r;
            worst = Some(i);
        }
        lower = lower.max(*l);
    }
    let c = best.max(0.0);
    Ok(SemiconvexityCertificate {
        region: region.clone(),
        c_r_estimate: c,
        kappa: 2.0 * c,
        c_r_lower: lower.max(0.0),
        samples: n_samples,
        worst: worst.map(|i| triples[i].clone()),
        interpolation_excess_bound: bound,
    })
}

fn interpolation_excess_bound(v: &GridFunction) -> f64 {
    let grid = v.grid();
    let vals = v.values();
    let mut total = 0.0;
    for axis in 0..grid.dim() {
        let mut worst = 0.0f64;
        for k in 0..grid.node_count() {
            if let (Some(l), Some(r)) = (grid.neighbor(k, axis, -1), grid.neighbor(k, axis, 1)) {
                worst = worst.max((vals[l] - 2.0 * vals[k] + vals[r]).abs());
            }
        }
        total += worst;
    }
    0.25 * total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub passed: bool,
    /// `min (rhs - lhs)` over the samples.
    pub worst_margin: f64,
    /// Points of the sample attaining the worst margin.
    pub worst_points: Vec<Vec<f64>>,
    /// Smallest `M` for which every sample satisfies the inequality.
    pub required_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueBoundsReport {
    pub m: f64,
    pub p: f64,
    pub samples: usize,
    pub seed: u64,
    pub growth: BoundCheck,
    pub lipschitz: BoundCheck,
    pub semiconvexity: BoundCheck,
}

impl ValueBoundsReport {
    pub fn passed(&self) -> bool {
        self.growth.passed && self.lipschitz.passed && self.semiconvexity.passed
    }
}

struct Sample {
    points: Vec<Vec<f64>>,
    lhs: f64,
    weight: f64,
}

fn summarize(samples: &[Sample], m: f64) -> BoundCheck {
    let mut worst_margin = f64::INFINITY;
    let mut worst_points = Vec::new();
    let mut required_m = 0.0f64;
    for s in samples {
        let margin = m * s.weight - s.lhs;
        if margin < worst_margin {
            worst_margin = margin;
            worst_points = s.points.clone();
        }
        if s.weight > 0.0 {
            required_m = required_m.max(s.lhs / s.weight);
        }
    }
    BoundCheck { passed: worst_margin >= 0.0, worst_margin, worst_points, required_m }
}

fn collect_samples(v: &GridFunction, p: f64, n_samples: usize, seed: u64) -> Result<[Vec<Sample>; 3]> {
    let grid = v.grid();
    let region = Region::whole(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let growth_points: Vec<Vec<f64>> =
        (0..grid.node_count()).map(|k| grid.node(k)).chain((0..n_samples).map(|_| region.sample(&mut rng))).collect();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..n_samples).map(|_| (region.sample(&mut rng), region.sample(&mut rng))).collect();
    let triples: Vec<Triple> = (0..n_samples).map(|_| draw_triple(&mut rng, &region)).collect();

    let growth = exec::try_map_range(Execution::default(), growth_points.len(), |i| {
        let x = &growth_points[i];
        Ok::<Sample, Error>(Sample {
            points: vec![x.clone()],
            lhs: v.interpolate(x)?.abs(),
            weight: 1.0 + norm(x).powf(p),
        })
    })?;
    let lipschitz = exec::try_map_range(Execution::default(), n_samples, |i| {
        let (xb, x) = &pairs[i];
        let d: Vec<f64> = xb.iter().zip(x).map(|(a, b)| a - b).collect();
        Ok::<Sample, Error>(Sample {
            points: vec![xb.clone(), x.clone()],
            lhs: (v.interpolate(xb)? - v.interpolate(x)?).abs(),
            weight: (1.0 + norm(xb).powf(p - 1.0) + norm(x).powf(p - 1.0)) * norm(&d),
        })
    })?;
    let semiconvexity = exec::try_map_range(Execution::default(), n_samples, |i| {
        let t = &triples[i];
        Ok::<Sample, Error>(Sample {
            points: vec![t.x.clone(), t.y.clone()],
            lhs: t.excess(v)?,
            weight: (1.0 + norm(&t.x).powf(p - 2.0) + norm(&t.y).powf(p - 2.0)) * t.weight(),
        })
    })?;
    Ok([growth, lipschitz, semiconvexity])
}

fn check_params(p: f64, n_samples: usize) -> Result<()> {
    if !(p >= 2.0) {
        return Err(Error::InvalidArgument(format!("growth exponent p must be >= 2, got {p}")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    Ok(())
}

/// Samples the growth bound (at every node and `n_samples` random points),
/// the Lipschitz bound (`n_samples` pairs) and the semiconvexity bound
/// (`n_samples` triples) over the grid box.
pub fn check_value_bounds(v: &GridFunction, m: f64, p: f64, n_samples: usize, seed: u64) -> Result<ValueBoundsReport> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("bound constant M must be positive, got {m}")));
    }
    check_params(p, n_samples)?;
    let [g, l, s] = collect_samples(v, p, n_samples, seed)?;
    Ok(ValueBoundsReport {
        m,
        p,
        samples: n_samples,
        seed,
        growth: summarize(&g, m),
        lipschitz: summarize(&l, m),
        semiconvexity: summarize(&s, m),
    })
}

/// Smallest `M` satisfying all three bounds on the drawn sample, times `safety`.
pub fn fit_bound_constant(v: &GridFunction, p: f64, n_samples: usize, seed: u64, safety: f64) -> Result<f64> {
    check_params(p, n_samples)?;
    let all = collect_samples(v, p, n_samples, seed)?;
    let m = all.iter().map(|s| summarize(s, 1.0).required_m).fold(0.0, f64::max);
    Ok((m * safety).max(f64::MIN_POSITIVE))
}

//! Problem specifications: coefficients of the controlled generator, control
//! sets, obstacle and impulse data, and pointwise Hamiltonian evaluation.
//!
//! For a control `a` the generator acts on `(r, p, P)` as
//!
//! ```text
//! L(a, x, r, p, P) = g(x,a) + <beta(x,a), p> + 1/2 Tr(sigma sigma^T P) - rho(x,a) r
//! H(x, r, p, P)    = max over the sampled control set of L(a, x, r, p, P)
//! ```

pub mod catalog;

pub use catalog::{catalog, BenchmarkOracle, OracleKind};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Constants, Expr};
use crate::lattice::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemClass {
    DriftControl,
    OptimalStopping,
    ImpulseControl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub beta: Vec<String>,
    pub sigma: Vec<Vec<String>>,
    pub g: String,
    pub rho: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSetConfig {
    /// Explicit list of control points, enumerated in the given order.
    Points(Vec<Vec<f64>>),
    /// Tensor sampling of a box, row-major (last coordinate fastest).
    Box(BoxConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseCosts {
    pub c0: f64,
    pub c1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSplitConfig {
    pub beta0: Vec<String>,
    pub beta1: Vec<String>,
}

/// On-disk problem description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub class: ProblemClass,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "box")]
    pub domain: BoxConfig,
    #[serde(default, skip_serializing_if = "Constants::is_empty")]
    pub constants: Constants,
    pub coefficients: CoefficientsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_set: Option<ControlSetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impulse_costs: Option<ImpulseCosts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_split: Option<DriftSplitConfig>,
    /// Declared lower bound on the discount rate; computed from the grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_min: Option<f64>,
}

/// Finite (sampled) control set in declared enumeration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl ControlSet {
    pub fn from_config(cfg: Option<&ControlSetConfig>) -> Result<Self> {
        let points = match cfg {
            None => vec![Vec::new()],
            Some(ControlSetConfig::Points(p)) => p.clone(),
            Some(ControlSetConfig::Box(b)) => {
                let d = b.lower.len();
                if b.upper.len() != d || b.points.len() != d {
                    return Err(Error::InvalidProblem("control box dimensions disagree".into()));
                }
                let mut out = vec![Vec::new()];
                for i in 0..d {
                    if b.points[i] == 0 || b.lower[i] > b.upper[i] {
                        return Err(Error::InvalidProblem(format!("bad control box on axis {i}")));
                    }
                    let k = b.points[i];
                    let vals: Vec<f64> = if k == 1 {
                        vec![b.lower[i]]
                    } else {
                        let h = (b.upper[i] - b.lower[i]) / (k - 1) as f64;
                        (0..k).map(|j| b.lower[i] + j as f64 * h).collect()
                    };
                    out = out
                        .into_iter()
                        .flat_map(|prefix| {
                            vals.iter().map(move |v| {
                                let mut p = prefix.clone();
                                p.push(*v);
                                p
                            })
                        })
                        .collect();
                }
                out
            }
        };
        if points.is_empty() {
            return Err(Error::EmptyControlSet);
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidProblem("control points have differing dimensions".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite control value".into()));
        }
        Ok(ControlSet { points, dim })
    }

    pub fn singleton() -> Self {
        ControlSet { points: vec![Vec::new()], dim: 0 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(|p| p.as_slice())
    }

    /// Index of the control closest to `a` (first on ties).
    pub fn closest(&self, a: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d: f64 = p.iter().zip(a).map(|(u, v)| (u - v) * (u - v)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Parsed coefficient expressions.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub beta: Vec<Expr>,
    pub sigma: Vec<Vec<Expr>>,
    pub g: Expr,
    pub rho: Expr,
}

#[derive(Clone, Debug)]
pub struct DriftSplit {
    pub beta0: Vec<Expr>,
    pub beta1: Vec<Expr>,
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    config: ProblemConfig,
    grid: Grid,
    pub class: ProblemClass,
    pub coefficients: Coefficients,
    pub control_set: ControlSet,
    pub obstacle: Option<Expr>,
    pub impulse_costs: Option<ImpulseCosts>,
    pub drift_split: Option<DriftSplit>,
}

fn parse_vec(src: &[String], c: &Constants) -> Result<Vec<Expr>> {
    src.iter().map(|s| Expr::parse(s, c)).collect()
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ProblemConfig = serde_json::from_str(text)?;
        ProblemSpec::from_config(cfg)
    }

    pub fn from_config(config: ProblemConfig) -> Result<Self> {
        let n = config.n;
        let m = config.m;
        let c = &config.constants;
        if let Some(name) = c.keys().find(|k| crate::expr::is_variable_name(k)) {
            return Err(Error::InvalidProblem(format!("constant `{name}` shadows a state or control variable")));
        }
        let grid = Grid::new(&config.domain.lower, &config.domain.upper, &config.domain.points)?;
        if grid.dim() != n {
            return Err(Error::InvalidProblem(format!("box has dimension {} but n = {n}", grid.dim())));
        }
        let co = &config.coefficients;
        if co.beta.len() != n {
            return Err(Error::InvalidProblem(format!("beta needs {n} components, got {}", co.beta.len())));
        }
        if co.sigma.len() != n || co.sigma.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidProblem(format!("sigma must be {n}x{m}")));
        }
        let coefficients = Coefficients {
            beta: parse_vec(&co.beta, c)?,
            sigma: co.sigma.iter().map(|row| parse_vec(row, c)).collect::<Result<_>>()?,
            g: Expr::parse(&co.g, c)?,
            rho: Expr::parse(&co.rho, c)?,
        };
        let control_set = ControlSet::from_config(config.control_set.as_ref())?;
        let obstacle = config.obstacle.as_deref().map(|s| Expr::parse(s, c)).transpose()?;
        let drift_split = match &config.drift_split {
            None => None,
            Some(ds) => {
                if ds.beta0.len() != n || ds.beta1.len() != n {
                    return Err(Error::InvalidProblem("drift_split components must have length n".into()));
                }
                Some(DriftSplit { beta0: parse_vec(&ds.beta0, c)?, beta1: parse_vec(&ds.beta1, c)? })
            }
        };
        let spec = ProblemSpec {
            class: config.class,
            impulse_costs: config.impulse_costs,
            config,
            grid,
            coefficients,
            control_set,
            obstacle,
            drift_split,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let d = self.control_set.dim();
        let mut all: Vec<&Expr> = Vec::new();
        all.extend(self.coefficients.beta.iter());
        all.extend(self.coefficients.sigma.iter().flatten());
        all.push(&self.coefficients.g);
        all.push(&self.coefficients.rho);
        if let Some(ds) = &self.drift_split {
            all.extend(ds.beta0.iter());
            all.extend(ds.beta1.iter());
        }
        for e in &all {
            if e.max_state_index() > n {
                return Err(Error::InvalidProblem(format!("`{e}` references a state beyond n = {n}")));
            }
            if e.max_control_index() > d {
                return Err(Error::InvalidProblem(format!("`{e}` references a control beyond d = {d}")));
            }
        }
        if let Some(ds) = &self.drift_split {
            if ds.beta0.iter().any(|e| e.max_control_index() > 0) {
                return Err(Error::InvalidProblem("beta0 must not depend on the control".into()));
            }
        }
        if let Some(ob) = &self.obstacle {
            if ob.max_state_index() > n || ob.max_control_index() > 0 {
                return Err(Error::InvalidProblem("obstacle must depend on the state only".into()));
            }
        }
        match self.class {
            ProblemClass::OptimalStopping if self.obstacle.is_none() => {
                return Err(Error::InvalidProblem("optimal stopping requires an obstacle".into()));
            }
            ProblemClass::ImpulseControl => match self.impulse_costs {
                None => return Err(Error::InvalidProblem("impulse control requires impulse_costs".into())),
                Some(c) if !(c.c0 > 0.0 && c.c1 > 0.0) => {
                    return Err(Error::InvalidProblem("impulse costs c0, c1 must be > 0".into()));
                }
                _ => {}
            },
            _ => {}
        }
        if matches!(self.class, ProblemClass::OptimalStopping | ProblemClass::ImpulseControl)
            && self.control_set.len() != 1
        {
            return Err(Error::InvalidProblem("stopping and impulse problems use a singleton control set".into()));
        }
        if let Some(r) = self.config.rho_min {
            if !(r > 0.0) {
                return Err(Error::InvalidProblem("rho_min must be > 0".into()));
            }
        }
        // Sampled checks: finiteness, rho >= 0, drift split consistency.
        let nodes = self.grid.node_count();
        let stride = (nodes * self.control_set.len() / 200_000).max(1);
        for k in (0..nodes).step_by(stride) {
            let x = self.grid.node(k);
            for a in self.control_set.iter() {
                for e in &all {
                    if e.max_control_index() == 0 || !a.is_empty() {
                        e.eval(&x, a)?;
                    }
                }
                let rho = self.rho(&x, a)?;
                if rho < 0.0 {
                    return Err(Error::InvalidProblem(format!("rho = {rho} < 0 at x = {x:?}")));
                }
                if let Some(ds) = &self.drift_split {
                    let beta = self.beta(&x, a)?;
                    for i in 0..n {
                        let split = ds.beta0[i].eval(&x, a)? + ds.beta1[i].eval(&x, a)?;
                        if (split - beta[i]).abs() > 1e-12 * (1.0 + beta[i].abs()) {
                            return Err(Error::InvalidProblem(format!(
                                "beta0 + beta1 = {split} differs from beta = {} at x = {x:?}, a = {a:?}",
                                beta[i]
                            )));
                        }
                    }
                }
            }
            if let Some(ob) = &self.obstacle {
                ob.eval(&x, &[])?;
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn m(&self) -> usize {
        self.config.m
    }

    pub fn declared_rho_min(&self) -> Option<f64> {
        self.config.rho_min
    }

    pub fn beta(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.coefficients.beta.iter().map(|e| e.eval(x, a)).collect()
    }

    pub fn beta0(&self, x: &[f64]) -> Option<Result<Vec<f64>>> {
        self.drift_split.as_ref().map(|ds| ds.beta0.iter().map(|e| e.eval(x, &[])).collect())
    }

    pub fn beta1(&self, x: &[f64], a: &[f64]) -> Option<Result<Vec<f64>>> {
        self.drift_split.as_ref().map(|ds| ds.beta1.iter().map(|e| e.eval(x, a)).collect())
    }

    pub fn sigma(&self, x: &[f64], a: &[f64]) -> Result<DMatrix<f64>> {
        let (n, m) = (self.n(), self.m());
        let mut s = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                s[(i, j)] = self.coefficients.sigma[i][j].eval(x, a)?;
            }
        }
        Ok(s)
    }

    /// Diffusion matrix `sigma sigma^T`.
    pub fn diffusion(&self, x: &[f64], a: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.sigma(x, a)?;
        Ok(&s * s.transpose())
    }

    pub fn reward(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        self.coefficients.g.eval(x, a)
    }

    pub fn rho(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        self.coefficients.rho.eval(x, a)
    }

    pub fn obstacle_at(&self, x: &[f64]) -> Option<Result<f64>> {
        self.obstacle.as_ref().map(|e| e.eval(x, &[]))
    }

    /// `L(a, x, r, p, P)` for the control `a` (given by value).
    pub fn eval_l(&self, a: &[f64], x: &[f64], r: f64, p: &[f64], hess: &DMatrix<f64>) -> Result<f64> {
        let n = self.n();
        if x.len() != n || p.len() != n || hess.nrows() != n || hess.ncols() != n {
            return Err(Error::DimensionMismatch("eval_L arguments must match the state dimension".into()));
        }
        let beta = self.beta(x, a)?;
        let a_mat = self.diffusion(x, a)?;
        let drift: f64 = beta.iter().zip(p).map(|(b, q)| b * q).sum();
        let trace = (&a_mat * hess).trace();
        Ok(self.reward(x, a)? + drift + 0.5 * trace - self.rho(x, a)? * r)
    }

    /// `H(x, r, p, P)` and the index of the first maximising control.
    pub fn eval_h(&self, x: &[f64], r: f64, p: &[f64], hess: &DMatrix<f64>) -> Result<(f64, usize)> {
        if self.control_set.is_empty() {
            return Err(Error::EmptyControlSet);
        }
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, a) in self.control_set.iter().enumerate() {
            let v = self.eval_l(a, x, r, p, hess)?;
            if v > best.0 {
                best = (v, i);
            }
        }
        Ok(best)
    }

    /// Smallest discount rate over grid nodes and controls.
    pub fn sampled_rho_min(&self) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for k in 0..self.grid.node_count() {
            let x = self.grid.node(k);
            for a in self.control_set.iter() {
                lo = lo.min(self.rho(&x, a)?);
            }
        }
        Ok(lo)
    }

    /// Same problem on a different grid over the same box.
    pub fn with_points(&self, points: &[usize]) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.domain.points = points.to_vec();
        ProblemSpec::from_config(cfg)
    }

    /// Same problem with the running reward shifted by a constant.
    pub fn with_reward_shift(&self, shift: f64) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.coefficients.g = format!("({}) + ({shift:?})", cfg.coefficients.g);
        ProblemSpec::from_config(cfg)
    }
}

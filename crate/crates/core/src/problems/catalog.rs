//! Benchmark problems with their oracles.
//!
//! * `B1` perpetual American put on geometric Brownian motion, closed form.
//! * `B2` two-asset exchange-of-baskets put; convex value, no closed form.
//! * `B3` degenerate two-dimensional stopping problem whose second coordinate
//!   is frozen; every slice is a perpetual put with a kinked strike.
//! * `B4` drift control with separable drift and quadratic running cost.
//! * `I1` one-dimensional mean-reverting impulse control problem.

use serde::Serialize;

use super::{
    BoxConfig, CoefficientsConfig, ControlSetConfig, DriftSplitConfig, ImpulseCosts, ProblemClass, ProblemConfig,
    ProblemSpec,
};
use crate::expr::Constants;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleKind {
    /// `V(x) = K - x` below `boundary`, `(K - b)(x / b)^exponent` above it.
    PerpetualPut { strike: f64, exponent: f64, boundary: f64 },
    /// Perpetual put in `x1` with strike `base + slope * |x2 - kink|`.
    SlicedPerpetualPut { base: f64, slope: f64, kink: f64, exponent: f64 },
    /// Only qualitative properties (convexity, bounds) are known.
    Qualitative,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkOracle {
    pub name: String,
    pub kind: OracleKind,
    pub provenance: String,
}

impl BenchmarkOracle {
    pub fn value(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            OracleKind::PerpetualPut { strike, exponent, .. } => Some(perpetual_put(strike, exponent, x[0]).0),
            OracleKind::SlicedPerpetualPut { base, slope, kink, exponent } => {
                Some(perpetual_put(base + slope * (x[1] - kink).abs(), exponent, x[0]).0)
            }
            OracleKind::Qualitative => None,
        }
    }

    /// Derivative of the oracle along the first coordinate.
    pub fn first_derivative(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            OracleKind::PerpetualPut { strike, exponent, .. } => Some(perpetual_put(strike, exponent, x[0]).1),
            OracleKind::SlicedPerpetualPut { base, slope, kink, exponent } => {
                Some(perpetual_put(base + slope * (x[1] - kink).abs(), exponent, x[0]).1)
            }
            OracleKind::Qualitative => None,
        }
    }

    /// Free-boundary location (first coordinate) for the given state.
    pub fn free_boundary(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            OracleKind::PerpetualPut { boundary, .. } => Some(boundary),
            OracleKind::SlicedPerpetualPut { base, slope, kink, exponent } => {
                let k = base + slope * (x[1] - kink).abs();
                Some(k * exponent / (exponent - 1.0))
            }
            OracleKind::Qualitative => None,
        }
    }
}

/// Negative root of `1/2 s^2 b (b - 1) + mu b - rho = 0`.
pub fn negative_root(mu: f64, s: f64, rho: f64) -> f64 {
    let qa = 0.5 * s * s;
    let qb = mu - qa;
    (-qb - (qb * qb + 4.0 * qa * rho).sqrt()) / (2.0 * qa)
}

/// Value and derivative of the perpetual put with strike `k`.
fn perpetual_put(k: f64, exponent: f64, x: f64) -> (f64, f64) {
    let b = k * exponent / (exponent - 1.0);
    if x <= b {
        (k - x, -1.0)
    } else {
        let v = (k - b) * (x / b).powf(exponent);
        (v, exponent * v / x)
    }
}

fn constants(pairs: &[(&str, f64)]) -> Constants {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn b1_config() -> ProblemConfig {
    ProblemConfig {
        class: ProblemClass::OptimalStopping,
        n: 1,
        m: 1,
        domain: BoxConfig { lower: vec![0.01], upper: vec![4.0], points: vec![4000] },
        constants: constants(&[("K", 1.0), ("mu", 0.0), ("s", 0.2), ("rho0", 0.05)]),
        coefficients: CoefficientsConfig {
            beta: strings(&["mu * x1"]),
            sigma: vec![strings(&["s * x1"])],
            g: "0".into(),
            rho: "rho0".into(),
        },
        control_set: None,
        obstacle: Some("pos(K - x1)".into()),
        impulse_costs: None,
        drift_split: None,
        rho_min: None,
    }
}

pub fn b2_config() -> ProblemConfig {
    ProblemConfig {
        class: ProblemClass::OptimalStopping,
        n: 2,
        m: 2,
        domain: BoxConfig { lower: vec![0.02, 0.02], upper: vec![2.5, 2.5], points: vec![100, 100] },
        constants: constants(&[
            ("K", 1.0),
            ("mu1", 0.01),
            ("mu2", 0.0),
            ("s11", 0.3),
            ("s12", 0.0),
            ("s21", 0.0),
            ("s22", 0.2),
            ("rho0", 0.05),
        ]),
        coefficients: CoefficientsConfig {
            beta: strings(&["mu1 * x1", "mu2 * x2"]),
            sigma: vec![strings(&["s11 * x1", "s12 * x1"]), strings(&["s21 * x2", "s22 * x2"])],
            g: "0".into(),
            rho: "rho0".into(),
        },
        control_set: None,
        obstacle: Some("pos(K - x1 - x2)".into()),
        impulse_costs: None,
        drift_split: None,
        rho_min: None,
    }
}

pub fn b3_config() -> ProblemConfig {
    ProblemConfig {
        class: ProblemClass::OptimalStopping,
        n: 2,
        m: 1,
        domain: BoxConfig { lower: vec![0.01, -1.0], upper: vec![4.0, 1.0], points: vec![400, 41] },
        constants: constants(&[("s", 0.2), ("rho0", 0.05), ("slope", 0.3), ("xstar", 0.0)]),
        coefficients: CoefficientsConfig {
            beta: strings(&["0", "0"]),
            sigma: vec![strings(&["s * x1"]), strings(&["0"])],
            g: "0".into(),
            rho: "rho0".into(),
        },
        control_set: None,
        obstacle: Some("pos(1 + slope * abs(x2 - xstar) - x1)".into()),
        impulse_costs: None,
        drift_split: None,
        rho_min: None,
    }
}

pub fn b4_config() -> ProblemConfig {
    ProblemConfig {
        class: ProblemClass::DriftControl,
        n: 1,
        m: 1,
        domain: BoxConfig { lower: vec![-2.0], upper: vec![2.0], points: vec![2001] },
        constants: constants(&[("eps", 0.5), ("vol", 0.1), ("rho0", 1.0)]),
        coefficients: CoefficientsConfig {
            beta: strings(&["-x1 + a1"]),
            sigma: vec![strings(&["vol"])],
            g: "-x1^2 - eps * a1^2".into(),
            rho: "rho0".into(),
        },
        control_set: Some(ControlSetConfig::Box(BoxConfig { lower: vec![-1.0], upper: vec![1.0], points: vec![41] })),
        obstacle: None,
        impulse_costs: None,
        drift_split: Some(DriftSplitConfig { beta0: strings(&["-x1"]), beta1: strings(&["a1"]) }),
        rho_min: None,
    }
}

pub fn i1_config() -> ProblemConfig {
    ProblemConfig {
        class: ProblemClass::ImpulseControl,
        n: 1,
        m: 1,
        domain: BoxConfig { lower: vec![-3.0], upper: vec![3.0], points: vec![601] },
        constants: constants(&[("vol", 0.3), ("rho0", 1.0)]),
        coefficients: CoefficientsConfig {
            beta: strings(&["-x1"]),
            sigma: vec![strings(&["vol"])],
            g: "-x1^2".into(),
            rho: "rho0".into(),
        },
        control_set: None,
        obstacle: None,
        impulse_costs: Some(ImpulseCosts { c0: 0.1, c1: 0.05 }),
        drift_split: None,
        rho_min: None,
    }
}

/// Config of the benchmark called `name` (`B1`, `B2`, `B3`, `B4`, `I1`).
pub fn config_by_name(name: &str) -> Option<ProblemConfig> {
    match name {
        "B1" => Some(b1_config()),
        "B2" => Some(b2_config()),
        "B3" => Some(b3_config()),
        "B4" => Some(b4_config()),
        "I1" => Some(i1_config()),
        _ => None,
    }
}

/// All benchmark problems, in the order B1, B2, B3, B4, I1.
pub fn catalog() -> Vec<(ProblemSpec, BenchmarkOracle)> {
    let put_exp = negative_root(0.0, 0.2, 0.05);
    let b1 = BenchmarkOracle {
        name: "B1".into(),
        kind: OracleKind::PerpetualPut { strike: 1.0, exponent: put_exp, boundary: put_exp / (put_exp - 1.0) },
        provenance: "closed-form perpetual put: smooth pasting of C x^b at b* = K b / (b - 1)".into(),
    };
    let b2 = BenchmarkOracle {
        name: "B2".into(),
        kind: OracleKind::Qualitative,
        provenance: "exchange-of-baskets put: value convex, 0 <= V <= K".into(),
    };
    let b3 = BenchmarkOracle {
        name: "B3".into(),
        kind: OracleKind::SlicedPerpetualPut { base: 1.0, slope: 0.3, kink: 0.0, exponent: put_exp },
        provenance: "x2 is frozen (zero drift and diffusion rows), so each slice is a perpetual put".into(),
    };
    let b4 = BenchmarkOracle {
        name: "B4".into(),
        kind: OracleKind::Qualitative,
        provenance: "separable drift control, S(x) = range(sigma) = R".into(),
    };
    let i1 = BenchmarkOracle {
        name: "I1".into(),
        kind: OracleKind::Qualitative,
        provenance: "mean-reverting impulse control; V <= 0".into(),
    };
    let build = |cfg: ProblemConfig| ProblemSpec::from_config(cfg).expect("catalog configs are valid");
    vec![
        (build(b1_config()), b1),
        (build(b2_config()), b2),
        (build(b3_config()), b3),
        (build(b4_config()), b4),
        (build(i1_config()), i1),
    ]
}

//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{catalog, ProblemConfig, ProblemSpec};
use crate::regularity::{WitnessOperator, DEFAULT_SEMICONVEXITY_SAMPLES, DEFAULT_TAU_RANK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    /// Problem config file, relative to the run config.
    Path(PathBuf),
    /// One of the catalog benchmarks: `B1`, `B2`, `B3`, `B4`, `I1`.
    Benchmark(String),
    Inline(ProblemConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveParams {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams { tol: default_tol(), max_iter: default_max_iter() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityParams {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    #[serde(default = "default_probes_per_axis")]
    pub probes_per_axis: usize,
    #[serde(default = "default_tau_rank")]
    pub tau_rank: f64,
    /// Fixed jump tolerance; scaled from the grid and slopes when absent.
    #[serde(default)]
    pub tol_jump: Option<f64>,
    #[serde(default = "default_tol_value")]
    pub smooth_fit_tol_value: f64,
    /// Defaults to five times the largest grid spacing.
    #[serde(default)]
    pub smooth_fit_tol_deriv: Option<f64>,
    #[serde(default = "default_semiconvexity_samples")]
    pub semiconvexity_samples: usize,
    #[serde(default = "default_bounds_p")]
    pub bounds_p: f64,
    #[serde(default = "default_bounds_samples")]
    pub bounds_samples: usize,
    /// Fitted from independent samples when absent.
    #[serde(default)]
    pub bounds_m: Option<f64>,
    #[serde(default = "default_bounds_safety")]
    pub bounds_safety: f64,
    #[serde(default)]
    pub continuity: Option<ContinuityParams>,
}

impl Default for VerifyParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all verify fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessInstance {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    #[serde(default)]
    pub kappa: f64,
    /// Rows of `sigma0`.
    pub sigma0: Vec<Vec<f64>>,
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default)]
    pub operator: WitnessOperator,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWitness {
    pub n: usize,
    pub m: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessParams {
    #[serde(default = "default_j_list")]
    pub j_list: Vec<u64>,
    #[serde(default)]
    pub instances: Vec<WitnessInstance>,
    /// Seeded random instances drawn in addition to `instances`.
    #[serde(default)]
    pub random: Option<RandomWitness>,
    #[serde(default = "default_witness_tol")]
    pub tol: f64,
}

impl Default for WitnessParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all witness fields have defaults")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Feedback map from the projected gradient when the drift is split,
    /// otherwise the policy written by `solve`.
    #[default]
    Auto,
    Solved,
    Feedback,
    /// Never stop, never jump; drift control uses the control closest to 0.
    NeverAct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    pub x0: Vec<Vec<f64>>,
    #[serde(default)]
    pub allowance: f64,
    #[serde(default)]
    pub policy: PolicyChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: Option<ProblemSource>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solve: SolveParams,
    #[serde(default)]
    pub verify: VerifyParams,
    #[serde(default)]
    pub witness: WitnessParams,
    #[serde(default)]
    pub simulate: Option<SimulateParams>,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}
fn default_deltas() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_pairs() -> usize {
    400
}
fn default_probes_per_axis() -> usize {
    15
}
fn default_tau_rank() -> f64 {
    DEFAULT_TAU_RANK
}
fn default_tol_value() -> f64 {
    1e-6
}
fn default_semiconvexity_samples() -> usize {
    DEFAULT_SEMICONVEXITY_SAMPLES
}
fn default_bounds_p() -> f64 {
    2.0
}
fn default_bounds_samples() -> usize {
    10_000
}
fn default_bounds_safety() -> f64 {
    1.25
}
fn default_label() -> String {
    "a".into()
}
fn default_j_list() -> Vec<u64> {
    vec![1, 10, 100]
}
fn default_witness_tol() -> f64 {
    1e-10
}
fn default_tail_tol() -> f64 {
    1e-6
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tolerances > 0 required, got {name} = {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        positive("solve.tol", self.solve.tol)?;
        let v = &self.verify;
        positive("verify.tau_rank", v.tau_rank)?;
        positive("verify.smooth_fit_tol_value", v.smooth_fit_tol_value)?;
        positive("verify.bounds_p", v.bounds_p)?;
        positive("verify.bounds_safety", v.bounds_safety)?;
        for (name, t) in [
            ("verify.tol_jump", v.tol_jump),
            ("verify.smooth_fit_tol_deriv", v.smooth_fit_tol_deriv),
            ("verify.bounds_m", v.bounds_m),
        ] {
            if let Some(t) = t {
                positive(name, t)?;
            }
        }
        positive("witness.tol", self.witness.tol)?;
        if let Some(s) = &self.simulate {
            positive("simulate.tail_tol", s.tail_tol)?;
            if !(s.allowance >= 0.0) {
                return Err(Error::InvalidArgument(format!("simulate.allowance must be >= 0, got {}", s.allowance)));
            }
        }
        Ok(())
    }

    /// Problem config named by `problem`, with paths resolved against `base`.
    pub fn problem_config(&self, base: &Path) -> Result<ProblemConfig> {
        match &self.problem {
            None => Err(Error::InvalidArgument("missing field `problem`".into())),
            Some(ProblemSource::Inline(cfg)) => Ok(cfg.clone()),
            Some(ProblemSource::Path(p)) => {
                let text = std::fs::read_to_string(base.join(p))?;
                Ok(serde_json::from_str(&text)?)
            }
            Some(ProblemSource::Benchmark(name)) => catalog::config_by_name(name)
                .ok_or_else(|| Error::InvalidArgument(format!("problem.benchmark: unknown benchmark `{name}`"))),
        }
    }

    pub fn problem(&self, base: &Path) -> Result<ProblemSpec> {
        ProblemSpec::from_config(self.problem_config(base)?)
    }
}

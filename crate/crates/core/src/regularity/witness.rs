//! Test functions that touch a semiconvex function with a kink along a
//! diffusion direction and drive the operator residual to infinity.
//!
//! With `d = p1 - p2`, `s = p1 + p2` and
//! `lambda_j = 4 (j + kappa |sigma0|_F^2) / |sigma0^T d|^2`,
//!
//! ```text
//! rho_j(t) = -lambda_j^3 t^4 + (lambda_j / 2) t^2
//! phi_j(y) = rho_j(<d, y> / 2) + <s, y> / 2 - (kappa / 2) |y|^2
//! ```
//!
//! so that `D phi_j(0) = s / 2` and `Tr(sigma0^T D^2 phi_j(0) sigma0) = j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of `L(a, 0, r, p, P) = g + <beta, p> + Tr(sigma sigma^T P)/2 - rho r`
/// at the kink point; `value` is `v(0)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WitnessOperator {
    pub drift: Vec<f64>,
    pub reward: f64,
    pub rho: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinkWitness {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub kappa: f64,
    /// Rows of `sigma0` (`n x m`).
    pub sigma0: Vec<Vec<f64>>,
    pub a_label: String,
    pub operator: WitnessOperator,
    pub j_list: Vec<u64>,
    pub lambda: Vec<f64>,
    /// `|D phi_j(0) - (p1 + p2)/2|_inf` from the closed-form gradient.
    pub gradient_error: Vec<f64>,
    /// Same comparison using central differences of `phi_j`.
    pub fd_gradient_error: Vec<f64>,
    pub trace: Vec<f64>,
    /// `|Tr(sigma0^T D^2 phi_j(0) sigma0) - j|`.
    pub trace_error: Vec<f64>,
    pub residual: Vec<f64>,
    /// Two-point slopes of the residual in `j`.
    pub residual_slopes: Vec<f64>,
    /// `max |slope_k - slope_0| / |slope_0|`.
    pub slope_consistency: f64,
    pub residual_increasing: bool,
    /// Largest `r` such that `rho_j(t) <= |t|` on every sampled `|t| <= r`.
    pub validity_radius: Vec<f64>,
    /// Half-width of the sampled `t` interval, `100 / lambda_j`.
    pub sampled_extent: Vec<f64>,
}

impl KinkWitness {
    pub fn identities_hold(&self, tol: f64) -> bool {
        self.trace_error.iter().chain(&self.gradient_error).all(|e| *e <= tol)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.identities_hold(tol) && self.residual_increasing
    }
}

fn rho(lambda: f64, t: f64) -> f64 {
    -lambda.powi(3) * t.powi(4) + 0.5 * lambda * t * t
}

fn rho_prime(lambda: f64, t: f64) -> f64 {
    -4.0 * lambda.powi(3) * t.powi(3) + lambda * t
}

fn rho_second(lambda: f64, t: f64) -> f64 {
    -12.0 * lambda.powi(3) * t * t + lambda
}

struct TestFunction<'a> {
    d: &'a DVector<f64>,
    s: &'a DVector<f64>,
    kappa: f64,
    lambda: f64,
}

impl TestFunction<'_> {
    fn value(&self, y: &DVector<f64>) -> f64 {
        rho(self.lambda, 0.5 * self.d.dot(y)) + 0.5 * self.s.dot(y) - 0.5 * self.kappa * y.norm_squared()
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        self.d * (0.5 * rho_prime(self.lambda, 0.5 * self.d.dot(y))) + self.s * 0.5 - y * self.kappa
    }

    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = y.len();
        self.d * self.d.transpose() * (0.25 * rho_second(self.lambda, 0.5 * self.d.dot(y)))
            - DMatrix::identity(n, n) * self.kappa
    }
}

pub fn kink_witness(
    p1: &[f64],
    p2: &[f64],
    kappa: f64,
    sigma0: &DMatrix<f64>,
    a_label: &str,
    j_list: &[u64],
    operator: &WitnessOperator,
) -> Result<KinkWitness> {
    let n = p1.len();
    if p2.len() != n || sigma0.nrows() != n || n == 0 {
        return Err(Error::DimensionMismatch("p1, p2 and sigma0 rows must agree".into()));
    }
    if !operator.drift.is_empty() && operator.drift.len() != n {
        return Err(Error::DimensionMismatch("witness drift must have the state dimension".into()));
    }
    if !(kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be >= 0, got {kappa}")));
    }
    if j_list.is_empty() || j_list[0] == 0 || j_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("j_list must be increasing positive integers".into()));
    }
    let pv1 = DVector::from_column_slice(p1);
    let pv2 = DVector::from_column_slice(p2);
    let d = &pv1 - &pv2;
    let s = &pv1 + &pv2;
    let sd = sigma0.transpose() * &d;
    let sd2 = sd.norm_squared();
    if !(sd2 > 1e-24 * (sigma0.norm_squared() * d.norm_squared()).max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateWitness);
    }
    let frob2 = sigma0.norm_squared();
    let zero = DVector::zeros(n);
    let half_s = &s * 0.5;
    let drift = if operator.drift.is_empty() { DVector::zeros(n) } else { DVector::from_column_slice(&operator.drift) };

    let mut w = KinkWitness {
        p1: p1.to_vec(),
        p2: p2.to_vec(),
        kappa,
        sigma0: sigma0.row_iter().map(|r| r.iter().copied().collect()).collect(),
        a_label: a_label.to_string(),
        operator: operator.clone(),
        j_list: j_list.to_vec(),
        lambda: Vec::new(),
        gradient_error: Vec::new(),
        fd_gradient_error: Vec::new(),
        trace: Vec::new(),
        trace_error: Vec::new(),
        residual: Vec::new(),
        residual_slopes: Vec::new(),
        slope_consistency: 0.0,
        residual_increasing: true,
        validity_radius: Vec::new(),
        sampled_extent: Vec::new(),
    };
    for &j in j_list {
        let jf = j as f64;
        let lambda = 4.0 * (jf + kappa * frob2) / sd2;
        let phi = TestFunction { d: &d, s: &s, kappa, lambda };
        let grad = phi.gradient(&zero);
        let hess = phi.hessian(&zero);
        let trace = (sigma0.transpose() * &hess * sigma0).trace();

        // phi has no cubic term at 0, so central differences are exact up to rounding
        let step = 1e-3 / (1.0 + lambda * d.amax());
        let fd: DVector<f64> = DVector::from_fn(n, |i, _| {
            let mut e = DVector::zeros(n);
            e[i] = step;
            (phi.value(&e) - phi.value(&-&e)) / (2.0 * step)
        });

        let extent = 100.0 / lambda;
        let samples = 20_000;
        let mut radius = extent;
        for k in 0..=samples {
            let t = extent * k as f64 / samples as f64;
            if rho(lambda, t) > t.abs() || rho(lambda, -t) > t.abs() {
                radius = t;
                break;
            }
        }

        w.lambda.push(lambda);
        w.gradient_error.push((&grad - &half_s).amax());
        w.fd_gradient_error.push((&fd - &half_s).amax());
        w.trace.push(trace);
        w.trace_error.push((trace - jf).abs());
        w.residual.push(operator.reward + drift.dot(&grad) + 0.5 * trace - operator.rho * operator.value);
        w.validity_radius.push(radius);
        w.sampled_extent.push(extent);
    }
    w.residual_slopes =
        w.residual.windows(2).zip(j_list.windows(2)).map(|(r, j)| (r[1] - r[0]) / (j[1] - j[0]) as f64).collect();
    w.residual_increasing = w.residual.windows(2).all(|r| r[1] > r[0]);
    if let Some(&first) = w.residual_slopes.first() {
        w.slope_consistency = w
            .residual_slopes
            .iter()
            .map(|s| (s - first).abs() / first.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
    }
    Ok(w)
}

//! In-browser demos: EM convergence on a one-regressor probit model, the
//! probit response curve, and the specific NOx emission calculator.
//!
//! The plain functions are target independent; `wasm` holds the JSON-string
//! bindings used by `www/index.html`.

use std::fmt;

use serde::Serialize;
use svtn_core::emissions::{ef_nox, is_high_emission, EmissionsError, ObdRecord, NOX_LIMIT_G_PER_KWH};
use svtn_core::setvalued_glm::{
    check_bound, contraction_estimate, convergence_bound, fit_em, simulate_probit, EmConfig,
    GlmError, NormalLink, SetValuedModel,
};

#[cfg(target_arch = "wasm32")]
mod wasm;

/// Largest sample the EM demo accepts.
pub const MAX_SAMPLES: usize = 20_000;

#[derive(Debug)]
pub enum DemoError {
    InvalidInput(String),
    Glm(GlmError),
    Emissions(EmissionsError),
}

impl fmt::Display for DemoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DemoError::InvalidInput(m) => write!(f, "invalid input: {m}"),
            DemoError::Glm(e) => e.fmt(f),
            DemoError::Emissions(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for DemoError {}

impl From<GlmError> for DemoError {
    fn from(e: GlmError) -> Self {
        DemoError::Glm(e)
    }
}

impl From<EmissionsError> for DemoError {
    fn from(e: EmissionsError) -> Self {
        DemoError::Emissions(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmDemo {
    pub theta_hat: f64,
    pub c_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_positive: usize,
    pub contraction: Option<f64>,
    pub loglik: Vec<f64>,
    /// `‖θ_t - θ_final‖` per iterate.
    pub errors: Vec<f64>,
    /// Convergence envelope per iterate; empty when it cannot be formed.
    pub bound: Vec<f64>,
    pub dominated: bool,
}

/// Simulates `n` draws of `s = 1{θx - C + d ≤ 0}`, `x, d ~ N(0, 1)`, and
/// fits `(θ, C)` by EM from zero.
pub fn em_demo(theta: f64, c: f64, n: usize, seed: u64) -> Result<EmDemo, DemoError> {
    if !(theta.is_finite() && c.is_finite()) {
        return Err(DemoError::InvalidInput("θ and C must be finite".into()));
    }
    if !(10..=MAX_SAMPLES).contains(&n) {
        return Err(DemoError::InvalidInput(format!("sample size must lie in 10..={MAX_SAMPLES}")));
    }
    let truth = SetValuedModel::augmented(vec![theta, -c])?;
    let data = simulate_probit(&truth, 1, n, seed)?;
    let n_positive = data.labels().iter().filter(|s| s.is_one()).count();
    let init = SetValuedModel::augmented(vec![0.0, 0.0])?;
    let fit = fit_em(&data, &init, &EmConfig { max_iter: 2000, ..EmConfig::default() })?;
    let trace = &fit.trace.theta_trace;
    let contraction = contraction_estimate(trace);
    let (errors, bound, dominated) = match contraction {
        Some(rho) if trace.len() >= 3 => {
            match convergence_bound(&fit, &fit.trace.gram_matrix(), &trace[0], &trace[1], rho) {
                Ok(b) => {
                    let check = check_bound(trace, &b);
                    (check.errors, check.bound, check.dominated)
                }
                Err(_) => (check_bound(trace, &[]).errors, Vec::new(), false),
            }
        }
        _ => (check_bound(trace, &[]).errors, Vec::new(), false),
    };
    Ok(EmDemo {
        theta_hat: fit.theta_hat[0],
        c_hat: -fit.theta_hat[1],
        iterations: fit.iterations,
        converged: fit.converged,
        n_positive,
        contraction,
        loglik: fit.loglik_trace,
        errors,
        bound,
        dominated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbitCurve {
    /// `(x, P(s = 1 | x))` pairs.
    pub points: Vec<(f64, f64)>,
    /// Regressor value where the probability crosses `p_star`; `None` when
    /// `θ = 0`.
    pub boundary: Option<f64>,
}

/// `P(s = 1 | x) = F(C - θx)` on an even grid over `[x_min, x_max]`.
pub fn probit_curve(
    theta: f64,
    c: f64,
    sigma: f64,
    p_star: f64,
    x_min: f64,
    x_max: f64,
    points: usize,
) -> Result<ProbitCurve, DemoError> {
    let link = NormalLink::new(sigma)?;
    if !(x_min < x_max) || !(2..=10_000).contains(&points) {
        return Err(DemoError::InvalidInput("need x_min < x_max and 2..=10000 points".into()));
    }
    if !(p_star > 0.0 && p_star < 1.0) {
        return Err(DemoError::InvalidInput("p* must lie in (0, 1)".into()));
    }
    let step = (x_max - x_min) / (points - 1) as f64;
    let points = (0..points)
        .map(|i| {
            let x = x_min + i as f64 * step;
            (x, link.cdf(c - theta * x))
        })
        .collect();
    let boundary = (theta != 0.0).then(|| (c - link.quantile(p_star)) / theta);
    Ok(ProbitCurve { points, boundary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmissionResult {
    /// g/kWh.
    pub ef: f64,
    pub high: bool,
    pub limit: f64,
}

pub fn emission(c_nox: f64, q_exh: f64, ent: f64, ens: f64) -> Result<EmissionResult, DemoError> {
    let record = ObdRecord {
        timestamp: 0.0,
        vehicle_id: String::new(),
        c_nox,
        q_exh,
        ent,
        ens,
    };
    let ef = ef_nox(&record)?;
    Ok(EmissionResult {
        ef,
        high: is_high_emission(ef),
        limit: NOX_LIMIT_G_PER_KWH,
    })
}

//! EM iteration for the set-valued model.
//!
//! Each E-step builds the quadratic minorizer
//!
//! ```text
//! l(θ | θ_t) = -½ θᵀ(A/σ²)θ + [(A/σ²)θ_t - g(θ_t)]ᵀθ + const,
//! g(θ_t) = Σ φ f(u) [1{s=1}/F(u) - 1{s=0}/(1 - F(u))],   u = C - φᵀθ_t
//! ```
//!
//! and the M-step is its closed-form maximizer `θ_{t+1} = θ_t - σ² A⁻¹ g(θ_t)`.
//! Both `log F` and `log(1 - F)` have curvature at most `1/σ²` for normal
//! noise, so the minorizer never exceeds the log-likelihood and the
//! likelihood trace is nondecreasing. With `σ = 1` the update is exactly the
//! unit-curvature form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::diagnostics::{contraction_estimate, convergence_bound};
use super::excitation::{gram, min_eigenvalue, EXCITATION_RTOL};
use super::{
    clamped_probs, ObservationSet, SetValuedModel, GlmError,
    DEFAULT_CLAMP_EPS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once `‖θ_{t+1} - θ_t‖ < tol`.
    pub tol: f64,
    pub clamp_eps: f64,
    /// Added to the diagonal of `A` before factorization.
    pub ridge: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            clamp_eps: DEFAULT_CLAMP_EPS,
            ridge: 0.0,
        }
    }
}

/// Outcome of [`fit_em`].
///
/// Serializes with exactly the public diagnostic fields; the iterate trace
/// and the excitation matrix ride along in memory only (see [`EmTrace`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_hat: Vec<f64>,
    /// `l(θ_0), l(θ_1), …`: one entry for the start plus one per iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub contraction_estimate: Option<f64>,
    pub bound_trace: Vec<f64>,
    pub fisher_info: Vec<Vec<f64>>,
    #[serde(skip)]
    pub trace: EmTrace,
}

/// Iterates and factorization data needed to rebuild the convergence bound.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub theta_trace: Vec<Vec<f64>>,
    /// `A` as factorized, ridge included.
    pub gram: Vec<Vec<f64>>,
    pub lambda_min: f64,
    pub ridge: f64,
    pub clamp_events: usize,
}

impl EmTrace {
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let n = self.gram.len();
        DMatrix::from_fn(n, n, |i, j| self.gram[i][j])
    }
}

struct EmSolver<'a> {
    data: &'a ObservationSet,
    model: &'a SetValuedModel,
    a: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    lambda_min: f64,
    eps: f64,
}

impl<'a> EmSolver<'a> {
    fn new(
        data: &'a ObservationSet,
        model: &'a SetValuedModel,
        ridge: f64,
        eps: f64,
    ) -> Result<Self, GlmError> {
        if data.dim() != model.dim() {
            return Err(GlmError::DimensionMismatch {
                expected: model.dim(),
                found: data.dim(),
            });
        }
        let mut a = gram(data.features())?;
        let raw_min = min_eigenvalue(&a);
        if ridge <= 0.0 && !(raw_min > EXCITATION_RTOL * a.trace().max(f64::MIN_POSITIVE)) {
            return Err(GlmError::Excitation {
                lambda_min: raw_min,
            });
        }
        for i in 0..a.nrows() {
            a[(i, i)] += ridge.max(0.0);
        }
        let lambda_min = raw_min + ridge.max(0.0);
        let chol = Cholesky::new(a.clone()).ok_or(GlmError::Excitation { lambda_min })?;
        Ok(Self {
            data,
            model,
            a,
            chol,
            lambda_min,
            eps,
        })
    }

    /// Log-likelihood, score `g(θ)` and the number of clamped probabilities,
    /// in one pass over the data.
    fn eval(&self, theta: &[f64]) -> (f64, DVector<f64>, usize) {
        let link = &self.model.noise;
        let mut g = DVector::<f64>::zeros(theta.len());
        let mut loglik = 0.0;
        let mut clamped = 0;
        for (phi, s) in self.data.iter() {
            let u = self.model.threshold - phi.dot(theta);
            let (p1, p0, hit) = clamped_probs(link, u, self.eps);
            clamped += hit as usize;
            let w = if s.is_one() {
                loglik += p1.ln();
                link.pdf(u) / p1
            } else {
                loglik += p0.ln();
                -link.pdf(u) / p0
            };
            for (gi, x) in g.iter_mut().zip(phi.as_slice()) {
                *gi += w * x;
            }
        }
        (loglik, g, clamped)
    }

    fn update(&self, theta: &[f64], g: &DVector<f64>) -> Vec<f64> {
        let scale = 1.0 / self.model.noise.curvature_bound();
        let delta = self.chol.solve(g);
        theta
            .iter()
            .zip(delta.iter())
            .map(|(t, d)| t - scale * d)
            .collect()
    }

    fn step(&self, theta: &[f64]) -> (Vec<f64>, usize) {
        let (_, g, clamped) = self.eval(theta);
        (self.update(theta, &g), clamped)
    }
}

/// One EM update from `model.theta`.
pub fn em_step(model: &SetValuedModel, data: &ObservationSet) -> Result<Vec<f64>, GlmError> {
    let solver = EmSolver::new(data, model, 0.0, DEFAULT_CLAMP_EPS)?;
    Ok(solver.step(&model.theta).0)
}

/// Value of the E-step minorizer built at `model.theta`, evaluated at
/// `theta`, without the θ-independent constant.
pub fn em_surrogate(
    model: &SetValuedModel,
    data: &ObservationSet,
    theta: &[f64],
) -> Result<f64, GlmError> {
    let solver = EmSolver::new(data, model, 0.0, DEFAULT_CLAMP_EPS)?;
    let k = model.noise.curvature_bound();
    let th = DVector::from_column_slice(theta);
    let th_t = DVector::from_column_slice(&model.theta);
    let (_, g, _) = solver.eval(&model.theta);
    let linear = &solver.a * &th_t * k - g;
    Ok(-0.5 * k * th.dot(&(&solver.a * &th)) + linear.dot(&th))
}

/// Closed-form probit information `Σ φφᵀ f(u)² / (F(u)(1 - F(u)))` at `model`.
pub fn fisher_information(
    model: &SetValuedModel,
    data: &ObservationSet,
    eps: f64,
) -> Result<DMatrix<f64>, GlmError> {
    if data.dim() != model.dim() {
        return Err(GlmError::DimensionMismatch {
            expected: model.dim(),
            found: data.dim(),
        });
    }
    let n = model.dim();
    let mut info = DMatrix::<f64>::zeros(n, n);
    for (phi, _) in data.iter() {
        let u = model.threshold - phi.dot(&model.theta);
        let (p1, p0, _) = clamped_probs(&model.noise, u, eps);
        let f = model.noise.pdf(u);
        let w = f * f / (p1 * p0);
        let v = phi.as_slice();
        for i in 0..n {
            for j in i..n {
                info[(i, j)] += w * v[i] * v[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            info[(i, j)] = info[(j, i)];
        }
    }
    Ok(info)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Iterates [`em_step`] from `init` until the step falls below `config.tol`
/// or `config.max_iter` is reached. Non-convergence is reported through
/// `converged = false`, not as an error.
pub fn fit_em(
    data: &ObservationSet,
    init: &SetValuedModel,
    config: &EmConfig,
) -> Result<FitReport, GlmError> {
    let solver = EmSolver::new(data, init, config.ridge, config.clamp_eps)?;
    let mut theta = init.theta.clone();
    let (ll, mut g, mut clamped) = solver.eval(&theta);
    let mut theta_trace = vec![theta.clone()];
    let mut loglik_trace = vec![ll];
    let mut clamp_events = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iter {
        let next = solver.update(&theta, &g);
        clamp_events += clamped;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite("EM iterate"));
        }
        let moved = norm_diff(&next, &theta);
        theta = next;
        iterations += 1;
        let (ll, g_next, c_next) = solver.eval(&theta);
        (g, clamped) = (g_next, c_next);
        theta_trace.push(theta.clone());
        loglik_trace.push(ll);
        if moved < config.tol {
            converged = true;
            break;
        }
    }

    let fitted = SetValuedModel {
        theta: theta.clone(),
        ..init.clone()
    };
    let fisher = fisher_information(&fitted, data, config.clamp_eps)?;
    let trace = EmTrace {
        theta_trace,
        gram: to_rows(&solver.a),
        lambda_min: solver.lambda_min,
        ridge: config.ridge.max(0.0),
        clamp_events,
    };
    let mut report = FitReport {
        theta_hat: theta,
        loglik_trace,
        iterations,
        converged,
        contraction_estimate: contraction_estimate(&trace.theta_trace),
        bound_trace: Vec::new(),
        fisher_info: to_rows(&fisher),
        trace,
    };
    if let Some(rho) = report.contraction_estimate {
        if report.trace.theta_trace.len() >= 3 {
            let a = report.trace.gram_matrix();
            let (t1, t2) = (
                report.trace.theta_trace[0].clone(),
                report.trace.theta_trace[1].clone(),
            );
            if let Ok(bound) = convergence_bound(&report, &a, &t1, &t2, rho) {
                report.bound_trace = bound;
            }
        }
    }
    Ok(report)
}

pub(crate) fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setvalued_glm::{
        augment, log_likelihood, simulate_probit, BinaryObservation, Feature, NormalLink,
    };

    fn one_d(s: u8) -> (SetValuedModel, ObservationSet) {
        let model = SetValuedModel::new(vec![0.0], 0.0, NormalLink::default()).unwrap();
        let data = ObservationSet::new(
            vec![Feature::new(vec![1.0]).unwrap()],
            vec![BinaryObservation::new(s).unwrap()],
        )
        .unwrap();
        (model, data)
    }

    #[test]
    fn single_positive_step() {
        // θ₁ = -f(0)/F(0) = -(1/√(2π))/0.5
        let (m, d) = one_d(1);
        let t = em_step(&m, &d).unwrap();
        assert!((t[0] + 0.797_884_560_802_865_4).abs() < 1e-12);
    }

    #[test]
    fn single_negative_step_is_mirrored() {
        let (m, d) = one_d(0);
        let t = em_step(&m, &d).unwrap();
        assert!((t[0] - 0.797_884_560_802_865_4).abs() < 1e-12);
    }

    #[test]
    fn balanced_score_is_a_fixed_point() {
        let model = SetValuedModel::new(vec![0.0], 0.0, NormalLink::default()).unwrap();
        let data = ObservationSet::new(
            vec![Feature::new(vec![1.0]).unwrap(), Feature::new(vec![1.0]).unwrap()],
            vec![BinaryObservation::ONE, BinaryObservation::ZERO],
        )
        .unwrap();
        assert_eq!(em_step(&model, &data).unwrap(), vec![0.0]);
    }

    #[test]
    fn singular_excitation_is_an_error() {
        let model = SetValuedModel::augmented(vec![0.0, 0.0]).unwrap();
        let data = ObservationSet::new(
            vec![augment(&[1.0]).unwrap(), augment(&[1.0]).unwrap()],
            vec![BinaryObservation::ONE, BinaryObservation::ZERO],
        )
        .unwrap();
        assert!(matches!(
            em_step(&model, &data),
            Err(GlmError::Excitation { .. })
        ));
        let ridged = EmConfig {
            ridge: 1e-6,
            ..EmConfig::default()
        };
        assert!(fit_em(&data, &model, &ridged).is_ok());
    }

    #[test]
    fn surrogate_ascends_and_touches() {
        let truth = SetValuedModel::augmented(vec![1.0, -0.5, -0.2]).unwrap();
        let data = simulate_probit(&truth, 2, 200, 5).unwrap();
        let mut model = SetValuedModel::augmented(vec![0.3, 0.3, 0.3]).unwrap();
        for _ in 0..5 {
            let next = em_step(&model, &data).unwrap();
            let here = em_surrogate(&model, &data, &model.theta).unwrap();
            let there = em_surrogate(&model, &data, &next).unwrap();
            assert!(there >= here);
            // Minorizer gap is the same constant at both points, so the
            // likelihood gain dominates the surrogate gain.
            let ll_here = log_likelihood(&model, &data).unwrap();
            let next_model = SetValuedModel::augmented(next.clone()).unwrap();
            let ll_there = log_likelihood(&next_model, &data).unwrap();
            assert!(ll_there - ll_here >= there - here - 1e-9);
            model = next_model;
        }
    }

    #[test]
    fn fit_is_monotone_and_converges() {
        let truth = SetValuedModel::augmented(vec![1.0, -0.5, -0.2]).unwrap();
        let data = simulate_probit(&truth, 2, 500, 11).unwrap();
        let report = fit_em(&data, &SetValuedModel::augmented(vec![0.0; 3]).unwrap(), &EmConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.loglik_trace.len(), report.iterations + 1);
        for w in report.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
        let rho = report.contraction_estimate.unwrap();
        assert!(rho > 0.0 && rho < 1.0);
        assert_eq!(report.bound_trace.len(), report.trace.theta_trace.len());
        // restarting at the MLE barely moves
        let at_mle = SetValuedModel::augmented(report.theta_hat.clone()).unwrap();
        let again = em_step(&at_mle, &data).unwrap();
        assert!(norm_diff(&again, &report.theta_hat) < 1e-8);
    }

    #[test]
    fn fisher_is_symmetric_psd() {
        let truth = SetValuedModel::augmented(vec![0.4, 0.1]).unwrap();
        let data = simulate_probit(&truth, 1, 100, 3).unwrap();
        let info = fisher_information(&truth, &data, DEFAULT_CLAMP_EPS).unwrap();
        assert_eq!(info, info.transpose());
        assert!(min_eigenvalue(&info) >= 0.0);
    }

    #[test]
    fn report_json_has_exact_fields() {
        let truth = SetValuedModel::augmented(vec![0.4, 0.1]).unwrap();
        let data = simulate_probit(&truth, 1, 100, 3).unwrap();
        let report = fit_em(&data, &SetValuedModel::augmented(vec![0.0; 2]).unwrap(), &EmConfig::default()).unwrap();
        let v = serde_json::to_value(&report).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "bound_trace",
                "contraction_estimate",
                "converged",
                "fisher_info",
                "iterations",
                "loglik_trace",
                "theta_hat"
            ]
        );
    }
}

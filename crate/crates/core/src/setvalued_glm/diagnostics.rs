//! Convergence-rate and large-sample diagnostics for the EM estimator.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::em::{fisher_information, fit_em, norm_diff, EmConfig, FitReport};
use super::excitation::min_eigenvalue;
use super::{augment, BinaryObservation, GlmError, NormalLink, ObservationSet, SetValuedModel};
use crate::seed::derive_seed;

/// Median ratio `‖θ_{t+2} - θ_{t+1}‖ / ‖θ_{t+1} - θ_t‖` over a trace.
///
/// Used as the empirical contraction factor `ρ = 1 - ε`. Steps of exactly
/// zero length are skipped; `None` when no ratio can be formed.
pub fn contraction_estimate(theta_trace: &[Vec<f64>]) -> Option<f64> {
    let steps: Vec<f64> = theta_trace
        .windows(2)
        .map(|w| norm_diff(&w[1], &w[0]))
        .collect();
    let mut ratios: Vec<f64> = steps
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_by(f64::total_cmp);
    let m = ratios.len();
    Some(if m % 2 == 1 {
        ratios[m / 2]
    } else {
        0.5 * (ratios[m / 2 - 1] + ratios[m / 2])
    })
}

/// Exponential-convergence envelope
///
/// ```text
/// bound(t) = √(Q₁/λ_min(A)) · ρ^{t/2} / (1 - √ρ),   Q₁ = ρ⁻¹ (θ₂ - θ₁)ᵀ A (θ₂ - θ₁)
/// ```
///
/// for `t = 1..=T`, where `θ₁` is the first recorded iterate (the start) and
/// `T` the number of recorded iterates in `report`.
pub fn convergence_bound(
    report: &FitReport,
    a: &DMatrix<f64>,
    theta_1: &[f64],
    theta_2: &[f64],
    rho: f64,
) -> Result<Vec<f64>, GlmError> {
    let t_max = report.trace.theta_trace.len();
    if t_max < 3 {
        return Err(GlmError::TooFewIterates(t_max));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(GlmError::InvalidContraction(rho));
    }
    if theta_1.len() != a.nrows() || theta_2.len() != a.nrows() {
        return Err(GlmError::DimensionMismatch {
            expected: a.nrows(),
            found: theta_1.len().min(theta_2.len()),
        });
    }
    let d = DVector::from_iterator(a.nrows(), theta_2.iter().zip(theta_1).map(|(x, y)| x - y));
    let q1 = d.dot(&(a * &d)) / rho;
    let lambda_min = min_eigenvalue(a);
    let root = rho.sqrt();
    let denom = 1.0 - root;
    if q1 == 0.0 {
        return Ok(vec![0.0; t_max]);
    }
    let scale = (q1 / lambda_min).sqrt() / denom;
    if !(scale.is_finite() && lambda_min > 0.0 && denom > 1e-12) {
        return Err(GlmError::UnusableBound(rho));
    }
    Ok((1..=t_max).map(|t| scale * root.powi(t as i32)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// `‖θ_t - θ_final‖` for each recorded iterate.
    pub errors: Vec<f64>,
    pub bound: Vec<f64>,
    pub dominated: bool,
    /// Largest `error / bound` over iterates with a nonzero bound.
    pub worst_ratio: f64,
}

/// Compares the measured distance to the final iterate with a bound trace.
pub fn check_bound(theta_trace: &[Vec<f64>], bound: &[f64]) -> BoundCheck {
    let last = theta_trace.last().cloned().unwrap_or_default();
    let errors: Vec<f64> = theta_trace.iter().map(|t| norm_diff(t, &last)).collect();
    let mut dominated = errors.len() == bound.len();
    let mut worst_ratio: f64 = 0.0;
    for (e, b) in errors.iter().zip(bound) {
        // absolute slack covers roundoff when both sides are ~0
        if *e > *b + 1e-12 {
            dominated = false;
        }
        if *b > 0.0 {
            worst_ratio = worst_ratio.max(e / b);
        }
    }
    BoundCheck {
        errors,
        bound: bound.to_vec(),
        dominated,
        worst_ratio,
    }
}

/// Draws `n` samples from the augmented model `truth` with regressors
/// `φ ~ N(0, I)` of length `n_regressors` (plus the constant column).
pub fn simulate_probit(
    truth: &SetValuedModel,
    n_regressors: usize,
    n: usize,
    seed: u64,
) -> Result<ObservationSet, GlmError> {
    if truth.dim() != n_regressors + 1 {
        return Err(GlmError::DimensionMismatch {
            expected: n_regressors + 1,
            found: truth.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = truth.noise.sigma();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let raw: Vec<f64> = (0..n_regressors)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let phi = augment(&raw)?;
        let noise: f64 = StandardNormal.sample(&mut rng);
        let y = phi.dot(&truth.theta) - truth.threshold + sigma * noise;
        labels.push(BinaryObservation::from(y <= 0.0));
        features.push(phi);
    }
    ObservationSet::new(features, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencySpec {
    /// Regression vector without the threshold.
    pub theta_star: Vec<f64>,
    pub c_star: f64,
    pub sigma: f64,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub em: EmConfig,
}

impl Default for ConsistencySpec {
    fn default() -> Self {
        Self {
            theta_star: vec![1.0, -0.5],
            c_star: 0.2,
            sigma: 1.0,
            n_list: vec![200, 800, 3200],
            reps: 100,
            seed: 2020,
            em: EmConfig::default(),
        }
    }
}

/// One row per sample size. Parameters are compared in augmented form
/// `[θ, -C]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub mean_error: f64,
    pub mean_estimate: Vec<f64>,
    /// Sample covariance of `√N(θ̂_N - θ*)` across reps.
    pub covariance: Vec<Vec<f64>>,
    /// Inverse of the per-sample information at `θ*`, averaged over reps.
    pub fisher_inverse: Vec<Vec<f64>>,
    pub rel_frobenius_error: f64,
    pub non_converged: usize,
}

struct RepOutcome {
    estimate: Vec<f64>,
    info_per_sample: DMatrix<f64>,
    converged: bool,
}

fn run_rep(spec: &ConsistencySpec, truth: &SetValuedModel, n: usize, seed: u64) -> Result<RepOutcome, GlmError> {
    let data = simulate_probit(truth, spec.theta_star.len(), n, seed)?;
    let init = SetValuedModel {
        theta: vec![0.0; truth.dim()],
        ..truth.clone()
    };
    let report = fit_em(&data, &init, &spec.em)?;
    let info = fisher_information(truth, &data, spec.em.clamp_eps)? / n as f64;
    Ok(RepOutcome {
        estimate: report.theta_hat,
        info_per_sample: info,
        converged: report.converged,
    })
}

#[cfg(feature = "parallel")]
fn run_reps(
    spec: &ConsistencySpec,
    truth: &SetValuedModel,
    n: usize,
    seeds: &[u64],
) -> Vec<Result<RepOutcome, GlmError>> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| run_rep(spec, truth, n, s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_reps(
    spec: &ConsistencySpec,
    truth: &SetValuedModel,
    n: usize,
    seeds: &[u64],
) -> Vec<Result<RepOutcome, GlmError>> {
    seeds.iter().map(|&s| run_rep(spec, truth, n, s)).collect()
}

/// Monte-Carlo check of strong consistency and asymptotic normality of the
/// EM estimate. Per-rep seeds derive from `(spec.seed, n, rep)`.
pub fn consistency_experiment(spec: &ConsistencySpec) -> Result<Vec<ConsistencyRow>, GlmError> {
    if spec.reps < 2 {
        return Err(GlmError::InvalidExperiment("need at least 2 reps".into()));
    }
    if spec.n_list.is_empty() || spec.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GlmError::InvalidExperiment(
            "n_list must be nonempty and strictly increasing".into(),
        ));
    }
    let mut theta_aug = spec.theta_star.clone();
    theta_aug.push(-spec.c_star);
    let truth = SetValuedModel::new(theta_aug.clone(), 0.0, NormalLink::new(spec.sigma)?)?;
    let dim = theta_aug.len();

    let mut rows = Vec::with_capacity(spec.n_list.len());
    for &n in &spec.n_list {
        let seeds: Vec<u64> = (0..spec.reps)
            .map(|r| derive_seed(derive_seed(spec.seed, n as u64), r as u64))
            .collect();
        let outcomes = run_reps(spec, &truth, n, &seeds)
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;

        let reps = outcomes.len() as f64;
        let star = DVector::from_column_slice(&theta_aug);
        let scaled: Vec<DVector<f64>> = outcomes
            .iter()
            .map(|o| (DVector::from_column_slice(&o.estimate) - &star) * (n as f64).sqrt())
            .collect();
        let mean_error = outcomes
            .iter()
            .map(|o| norm_diff(&o.estimate, &theta_aug))
            .sum::<f64>()
            / reps;
        let mean_estimate: Vec<f64> = (0..dim)
            .map(|i| outcomes.iter().map(|o| o.estimate[i]).sum::<f64>() / reps)
            .collect();
        let center = scaled.iter().fold(DVector::zeros(dim), |acc, v| acc + v) / reps;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for v in &scaled {
            let c = v - &center;
            cov += &c * c.transpose();
        }
        cov /= reps - 1.0;
        let info = outcomes
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, o| acc + &o.info_per_sample)
            / reps;
        let info_inv = info
            .clone()
            .cholesky()
            .ok_or(GlmError::Excitation {
                lambda_min: min_eigenvalue(&info),
            })?
            .inverse();
        let rel = (&cov - &info_inv).norm() / info_inv.norm();
        rows.push(ConsistencyRow {
            n,
            mean_error,
            mean_estimate,
            covariance: rows_of(&cov),
            fisher_inverse: rows_of(&info_inv),
            rel_frobenius_error: rel,
            non_converged: outcomes.iter().filter(|o| !o.converged).count(),
        });
    }
    Ok(rows)
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setvalued_glm::em::EmTrace;

    fn report_with_trace(trace: Vec<Vec<f64>>) -> FitReport {
        FitReport {
            theta_hat: trace.last().unwrap().clone(),
            loglik_trace: vec![],
            iterations: trace.len() - 1,
            converged: true,
            contraction_estimate: None,
            bound_trace: vec![],
            fisher_info: vec![],
            trace: EmTrace {
                theta_trace: trace,
                ..EmTrace::default()
            },
        }
    }

    #[test]
    fn contraction_of_geometric_trace() {
        let trace: Vec<Vec<f64>> = (0..10).map(|t| vec![1.0 - 0.5f64.powi(t)]).collect();
        assert!((contraction_estimate(&trace).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(contraction_estimate(&trace[..2]), None);
    }

    #[test]
    fn bound_is_zero_when_first_step_is_zero() {
        let trace = vec![vec![0.3, 0.1]; 4];
        let report = report_with_trace(trace.clone());
        let a = DMatrix::identity(2, 2);
        let b = convergence_bound(&report, &a, &trace[0], &trace[1], 0.5).unwrap();
        assert_eq!(b, vec![0.0; 4]);
        assert!(check_bound(&trace, &b).dominated);
    }

    #[test]
    fn bound_rejects_bad_inputs() {
        let report = report_with_trace(vec![vec![0.0], vec![1.0]]);
        let a = DMatrix::identity(1, 1);
        assert_eq!(
            convergence_bound(&report, &a, &[0.0], &[1.0], 0.5),
            Err(GlmError::TooFewIterates(2))
        );
        let report = report_with_trace(vec![vec![0.0], vec![1.0], vec![1.5]]);
        assert_eq!(
            convergence_bound(&report, &a, &[0.0], &[1.0], 1.0),
            Err(GlmError::InvalidContraction(1.0))
        );
        assert!(matches!(
            convergence_bound(&report, &a, &[0.0], &[1.0], 1.0 - 1e-15),
            Err(GlmError::UnusableBound(_))
        ));
    }

    #[test]
    fn bound_dominates_a_real_fit() {
        let truth = SetValuedModel::augmented(vec![1.0, -0.5, -0.2]).unwrap();
        let data = simulate_probit(&truth, 2, 500, 99).unwrap();
        let report = fit_em(&data, &SetValuedModel::augmented(vec![0.0; 3]).unwrap(), &EmConfig::default()).unwrap();
        let check = check_bound(&report.trace.theta_trace, &report.bound_trace);
        assert!(check.dominated, "worst ratio {}", check.worst_ratio);
        // geometric decay of successive steps
        let rho = report.contraction_estimate.unwrap();
        assert!(rho < 1.0);
    }

    #[test]
    fn symmetric_truth_gives_centered_estimates() {
        let spec = ConsistencySpec {
            theta_star: vec![0.0],
            c_star: 0.0,
            n_list: vec![400, 1600],
            reps: 30,
            ..ConsistencySpec::default()
        };
        let rows = consistency_experiment(&spec).unwrap();
        for r in &rows {
            for m in &r.mean_estimate {
                assert!(m.abs() < 0.06, "{:?}", r.mean_estimate);
            }
        }
        assert!(rows[1].mean_error < rows[0].mean_error);
    }

    #[test]
    fn experiment_validates_spec() {
        let bad = ConsistencySpec {
            n_list: vec![800, 200],
            ..ConsistencySpec::default()
        };
        assert!(consistency_experiment(&bad).is_err());
        let bad = ConsistencySpec {
            reps: 1,
            ..ConsistencySpec::default()
        };
        assert!(consistency_experiment(&bad).is_err());
    }
}

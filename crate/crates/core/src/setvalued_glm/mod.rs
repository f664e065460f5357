//! Set-valued identification of a binary-observed linear model.
//!
//! The latent output is `y = φᵀθ - C + d` with `d ~ N(0, σ²)`, and only the
//! indicator `s = 1{y ≤ 0}` is observed. Equivalently `s | φ ~ Bernoulli(F(C -
//! φᵀθ))`, a probit GLM. This module holds the exact likelihood, the EM
//! iteration that maximizes it, and the convergence / consistency
//! diagnostics that go with it.
//!
//! The threshold `C` is usually estimated jointly with `θ` by augmenting
//! every feature with a trailing constant 1 (see [`augment`]); the last
//! component of `θ` then carries `-C` and the model's own `threshold` stays
//! at zero.

mod diagnostics;
mod em;
mod excitation;
mod link;

pub use diagnostics::{
    check_bound, consistency_experiment, contraction_estimate, convergence_bound,
    simulate_probit, BoundCheck, ConsistencyRow, ConsistencySpec,
};
pub use em::{em_step, em_surrogate, fisher_information, fit_em, EmConfig, EmTrace, FitReport};
pub use excitation::{check_excitation, ExcitationReport};
pub use link::NormalLink;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("empty input")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("noise scale must be finite and positive, got {0}")]
    InvalidNoiseScale(f64),
    #[error("excitation matrix is not positive definite (lambda_min = {lambda_min:e})")]
    Excitation { lambda_min: f64 },
    #[error("need at least 3 iterates for a convergence bound, got {0}")]
    TooFewIterates(usize),
    #[error("contraction factor must lie in (0, 1), got {0}")]
    InvalidContraction(f64),
    #[error("convergence bound is unusable (contraction factor {0} too close to 1)")]
    UnusableBound(f64),
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
}

/// A regressor vector `φ`. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Feature(Vec<f64>);

impl Feature {
    pub fn new(values: Vec<f64>) -> Result<Self, GlmError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite("feature"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, theta: &[f64]) -> f64 {
        self.0.iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Feature {
    type Error = GlmError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Feature> for Vec<f64> {
    fn from(f: Feature) -> Self {
        f.0
    }
}

/// Appends the constant-1 regressor that houses `-C`.
pub fn augment(phi: &[f64]) -> Result<Feature, GlmError> {
    let mut v = Vec::with_capacity(phi.len() + 1);
    v.extend_from_slice(phi);
    v.push(1.0);
    Feature::new(v)
}

/// An observed label `s ∈ {0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BinaryObservation(bool);

impl BinaryObservation {
    pub const ZERO: Self = Self(false);
    pub const ONE: Self = Self(true);

    pub fn new(s: u8) -> Result<Self, GlmError> {
        match s {
            0 => Ok(Self::ZERO),
            1 => Ok(Self::ONE),
            other => Err(GlmError::InvalidLabel(other)),
        }
    }

    pub fn is_one(self) -> bool {
        self.0
    }

    pub fn as_u8(self) -> u8 {
        self.0 as u8
    }
}

impl From<bool> for BinaryObservation {
    fn from(b: bool) -> Self {
        Self(b)
    }
}

impl TryFrom<u8> for BinaryObservation {
    type Error = GlmError;

    fn try_from(s: u8) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<BinaryObservation> for u8 {
    fn from(s: BinaryObservation) -> Self {
        s.as_u8()
    }
}

/// Paired regressors and binary observations with a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    features: Vec<Feature>,
    labels: Vec<BinaryObservation>,
    dim: usize,
}

impl ObservationSet {
    pub fn new(features: Vec<Feature>, labels: Vec<BinaryObservation>) -> Result<Self, GlmError> {
        if features.is_empty() {
            return Err(GlmError::Empty);
        }
        if features.len() != labels.len() {
            return Err(GlmError::DimensionMismatch {
                expected: features.len(),
                found: labels.len(),
            });
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(GlmError::Empty);
        }
        if let Some(bad) = features.iter().find(|f| f.len() != dim) {
            return Err(GlmError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    /// Builds from raw rows, appending the constant-1 column to each.
    pub fn augmented(rows: &[Vec<f64>], labels: &[BinaryObservation]) -> Result<Self, GlmError> {
        let features = rows
            .iter()
            .map(|r| augment(r))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(features, labels.to_vec())
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn labels(&self) -> &[BinaryObservation] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Feature, BinaryObservation)> {
        self.features.iter().zip(self.labels.iter().copied())
    }
}

/// Parameter vector `θ`, fixed threshold `C` and noise scale.
///
/// With augmented features `threshold` is 0 and `θ`'s last entry is `-C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetValuedModel {
    pub theta: Vec<f64>,
    pub threshold: f64,
    pub noise: NormalLink,
}

impl SetValuedModel {
    pub fn new(theta: Vec<f64>, threshold: f64, noise: NormalLink) -> Result<Self, GlmError> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite("theta"));
        }
        if !threshold.is_finite() {
            return Err(GlmError::NonFinite("threshold"));
        }
        Ok(Self {
            theta,
            threshold,
            noise,
        })
    }

    /// Standard-normal noise, threshold absorbed into `θ`.
    pub fn augmented(theta: Vec<f64>) -> Result<Self, GlmError> {
        Self::new(theta, 0.0, NormalLink::default())
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Effective threshold: the fixed `C` plus `-θ_last` when the last
    /// regressor is the constant column.
    pub fn absorbed_threshold(&self) -> f64 {
        self.threshold - self.theta.last().copied().unwrap_or(0.0)
    }

    /// `u = C - φᵀθ`, the argument of the link.
    pub fn margin(&self, phi: &Feature) -> Result<f64, GlmError> {
        if phi.len() != self.theta.len() {
            return Err(GlmError::DimensionMismatch {
                expected: self.theta.len(),
                found: phi.len(),
            });
        }
        Ok(self.threshold - phi.dot(&self.theta))
    }
}

/// `P{s = 1 | φ, θ} = F(C - φᵀθ)`.
pub fn prob_s1(model: &SetValuedModel, phi: &Feature) -> Result<f64, GlmError> {
    let u = model.margin(phi)?;
    Ok(model.noise.cdf(u))
}

/// `P{s = 0 | φ, θ}`, the exact complement of [`prob_s1`].
pub fn prob_s0(model: &SetValuedModel, phi: &Feature) -> Result<f64, GlmError> {
    Ok(1.0 - prob_s1(model, phi)?)
}

/// Clamped `(F(u), 1 - F(u))` pair, plus whether clamping kicked in.
pub(crate) fn clamped_probs(link: &NormalLink, u: f64, eps: f64) -> (f64, f64, bool) {
    let p1 = link.cdf(u);
    let p0 = link.sf(u);
    let clamped = p1 < eps || p0 < eps;
    (p1.clamp(eps, 1.0 - eps), p0.clamp(eps, 1.0 - eps), clamped)
}

pub const DEFAULT_CLAMP_EPS: f64 = 1e-12;

/// Log-likelihood `Σ s log F(u) + (1 - s) log(1 - F(u))` with probabilities
/// clamped to `[eps, 1 - eps]`.
pub fn log_likelihood_clamped(
    model: &SetValuedModel,
    data: &ObservationSet,
    eps: f64,
) -> Result<f64, GlmError> {
    if data.dim() != model.dim() {
        return Err(GlmError::DimensionMismatch {
            expected: model.dim(),
            found: data.dim(),
        });
    }
    let mut total = 0.0;
    for (phi, s) in data.iter() {
        let u = model.threshold - phi.dot(&model.theta);
        let (p1, p0, _) = clamped_probs(&model.noise, u, eps);
        total += if s.is_one() { p1.ln() } else { p0.ln() };
    }
    Ok(total)
}

pub fn log_likelihood(model: &SetValuedModel, data: &ObservationSet) -> Result<f64, GlmError> {
    log_likelihood_clamped(model, data, DEFAULT_CLAMP_EPS)
}

/// Decision rule: label 1 iff `prob_s1 ≥ p_star`.
pub fn predict(
    model: &SetValuedModel,
    phi: &Feature,
    p_star: f64,
) -> Result<BinaryObservation, GlmError> {
    Ok(decide(prob_s1(model, phi)?, p_star))
}

pub fn decide(prob: f64, p_star: f64) -> BinaryObservation {
    BinaryObservation::from(prob >= p_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feat(v: &[f64]) -> Feature {
        Feature::new(v.to_vec()).unwrap()
    }

    fn model(theta: &[f64], c: f64) -> SetValuedModel {
        SetValuedModel::new(theta.to_vec(), c, NormalLink::default()).unwrap()
    }

    #[test]
    fn prob_zero_theta_is_half() {
        let m = model(&[0.0, 0.0], 0.0);
        assert_eq!(prob_s1(&m, &feat(&[3.0, -2.0])).unwrap(), 0.5);
    }

    #[test]
    fn prob_at_minus_1_96() {
        let m = model(&[1.0], 0.0);
        let p = prob_s1(&m, &feat(&[-1.96])).unwrap();
        assert!((p - 0.975_002_104_851_78).abs() < 1e-12);
    }

    #[test]
    fn prob_argument_cancels() {
        let m = model(&[1.0], 1.0);
        assert_eq!(prob_s1(&m, &feat(&[1.0])).unwrap(), 0.5);
    }

    #[test]
    fn prob_rejects_dimension_mismatch() {
        let m = model(&[1.0, 2.0], 0.0);
        assert!(matches!(
            prob_s1(&m, &feat(&[1.0])),
            Err(GlmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn feature_rejects_non_finite() {
        assert!(Feature::new(vec![1.0, f64::NAN]).is_err());
        assert!(SetValuedModel::augmented(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn loglik_single_half() {
        let m = model(&[0.0], 0.0);
        let data = ObservationSet::new(vec![feat(&[1.0])], vec![BinaryObservation::ONE]).unwrap();
        assert!((log_likelihood(&m, &data).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loglik_is_additive() {
        let m = model(&[0.0], 0.0);
        let data = ObservationSet::new(
            vec![feat(&[1.0]), feat(&[-2.0])],
            vec![BinaryObservation::ONE, BinaryObservation::ZERO],
        )
        .unwrap();
        assert!((log_likelihood(&m, &data).unwrap() + 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn loglik_two_sample_example() {
        // log Φ(-1) twice.
        let m = model(&[1.0], 0.0);
        let data = ObservationSet::new(
            vec![feat(&[1.0]), feat(&[-1.0])],
            vec![BinaryObservation::ONE, BinaryObservation::ZERO],
        )
        .unwrap();
        let ll = log_likelihood(&m, &data).unwrap();
        assert!((ll - 2.0 * 0.158_655_253_931_457_05f64.ln()).abs() < 1e-12);
        assert!((ll + 3.6821).abs() < 1e-4);
    }

    #[test]
    fn observation_set_validates() {
        assert_eq!(ObservationSet::new(vec![], vec![]), Err(GlmError::Empty));
        assert!(matches!(
            ObservationSet::new(
                vec![feat(&[1.0]), feat(&[1.0, 2.0])],
                vec![BinaryObservation::ONE, BinaryObservation::ZERO]
            ),
            Err(GlmError::DimensionMismatch { .. })
        ));
        assert_eq!(BinaryObservation::new(2), Err(GlmError::InvalidLabel(2)));
    }

    #[test]
    fn predict_ties_go_positive() {
        assert_eq!(decide(0.5, 0.5), BinaryObservation::ONE);
        assert_eq!(decide(0.49, 0.5), BinaryObservation::ZERO);
        let m = model(&[0.0], 0.0);
        assert_eq!(predict(&m, &feat(&[2.0]), 0.5).unwrap(), BinaryObservation::ONE);
    }

    #[test]
    fn augmentation_carries_threshold() {
        let m = SetValuedModel::augmented(vec![1.0, -0.4]).unwrap();
        assert!((m.absorbed_threshold() - 0.4).abs() < 1e-15);
        let fixed = model(&[1.0], 0.4);
        let p_aug = prob_s1(&m, &augment(&[0.7]).unwrap()).unwrap();
        let p_fix = prob_s1(&fixed, &feat(&[0.7])).unwrap();
        assert!((p_aug - p_fix).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn complement_is_exact(x in -5.0f64..5.0, t in -3.0f64..3.0, c in -2.0f64..2.0) {
            let m = model(&[t], c);
            let phi = feat(&[x]);
            let p1 = prob_s1(&m, &phi).unwrap();
            let p0 = prob_s0(&m, &phi).unwrap();
            prop_assert_eq!(p1 + p0, 1.0);
        }

        #[test]
        fn scale_coupling_leaves_probabilities_unchanged(
            x in -4.0f64..4.0, t in -2.0f64..2.0, c in -1.5f64..1.5, scale in 0.2f64..5.0
        ) {
            let base = model(&[t], c);
            let scaled = SetValuedModel::new(vec![t * scale], c * scale, NormalLink::new(scale).unwrap()).unwrap();
            let phi = feat(&[x]);
            let p = prob_s1(&base, &phi).unwrap();
            let q = prob_s1(&scaled, &phi).unwrap();
            prop_assert!((p - q).abs() < 1e-12);
            prop_assert_eq!(predict(&base, &phi, 0.5).unwrap(), predict(&scaled, &phi, 0.5).unwrap());
        }

        #[test]
        fn loglik_never_positive(xs in proptest::collection::vec((-3.0f64..3.0, any::<bool>()), 1..30), t in -3.0f64..3.0) {
            let feats = xs.iter().map(|(x, _)| feat(&[*x])).collect();
            let labels = xs.iter().map(|(_, s)| BinaryObservation::from(*s)).collect();
            let data = ObservationSet::new(feats, labels).unwrap();
            prop_assert!(log_likelihood(&model(&[t], 0.0), &data).unwrap() <= 0.0);
        }
    }
}

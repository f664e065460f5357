//! Model variants built from the encoder and the set-valued GLM.
//!
//! * `svtn`: encoder features, power-expanded to order `k`, standardized,
//!   augmented with a constant and fitted by EM.
//! * `transformer_only`: the encoder's own logit head, `σ(logit) ≥ p*`.
//! * `sv_raw`: per-window channel means and standard deviations in place of
//!   encoder features, otherwise as `svtn`.

mod io;
mod transform;

pub use io::{load_pipeline, save_pipeline, MANIFEST_VERSION};
pub use transform::{power_expand, raw_summary, InputNorm, InputTransform, Standardizer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emissions::MicroTrip;
use crate::encoder::{
    self, EncoderConfig, EncoderError, EncoderModel, TrainConfig, TrainingBatch,
};
use crate::setvalued_glm::{
    augment, check_excitation, decide, fit_em, prob_s1, BinaryObservation, EmConfig, FitReport,
    GlmError, ObservationSet, SetValuedModel,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    Empty,
    #[error("training set contains only class {0}")]
    SingleClass(u8),
    #[error("inconsistent input: {0}")]
    Shape(String),
    #[error("feature dimension mismatch: fitted on {expected}, got {found}")]
    FeatureDim { expected: usize, found: usize },
    #[error("expanded features lack excitation (smallest eigenvalue {lambda_min:e})")]
    Excitation { lambda_min: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("pipeline directory: {0}")]
    Artifact(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Svtn,
    TransformerOnly,
    SvRaw,
}

impl Variant {
    pub fn uses_encoder(self) -> bool {
        matches!(self, Variant::Svtn | Variant::TransformerOnly)
    }

    pub fn uses_glm(self) -> bool {
        matches!(self, Variant::Svtn | Variant::SvRaw)
    }
}

/// Condition threshold below which `A` gets a ridge of
/// `1e-8 · trace(A) / dim`.
pub const JITTER_RCOND: f64 = 1e-10;
/// Relative smallest eigenvalue treated as rank deficiency.
pub const RANK_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub variant: Variant,
    /// Power order for the GLM variants.
    pub k: usize,
    /// `seq_len` and `input_channels` are taken from the data.
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub glm: EmConfig,
    /// Decision threshold on the high-emission probability.
    pub p_star: f64,
    /// Z-score GLM features with training statistics.
    pub standardize: bool,
    pub input_norm: InputNorm,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Svtn,
            k: 1,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            glm: EmConfig::default(),
            p_star: 0.5,
            standardize: true,
            input_norm: InputNorm::Global,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.p_star > 0.0 && self.p_star < 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "p_star must lie in (0, 1), got {}",
                self.p_star
            )));
        }
        Ok(())
    }
}

/// Trained encoder plus the input transform it was trained behind.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStage {
    pub input: InputTransform,
    pub model: EncoderModel,
    pub loss_history: Vec<f64>,
}

/// Fitted GLM head with the feature transform chain that feeds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmStage {
    pub k: usize,
    /// Dimension before power expansion.
    pub base_dim: usize,
    pub standardizer: Standardizer,
    pub model: SetValuedModel,
    /// Diagonal jitter added to `A` (0 when none was needed).
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub config: PipelineConfig,
    pub input: InputTransform,
    pub encoder: Option<EncoderModel>,
    pub encoder_loss: Vec<f64>,
    pub glm: Option<GlmStage>,
    pub report: Option<FitReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: Vec<u8>,
    /// High-emission probability per trip.
    pub probabilities: Vec<f64>,
}

fn labels_of(trips: &[MicroTrip]) -> Result<Vec<u8>, PipelineError> {
    if trips.is_empty() {
        return Err(PipelineError::Empty);
    }
    let labels: Vec<u8> = trips.iter().map(|t| t.label).collect();
    if let Some(&bad) = labels.iter().find(|&&z| z > 1) {
        return Err(PipelineError::Shape(format!("label {bad} is not binary")));
    }
    let n_pos = labels.iter().filter(|&&z| z == 1).count();
    if n_pos == 0 {
        return Err(PipelineError::SingleClass(0));
    }
    if n_pos == labels.len() {
        return Err(PipelineError::SingleClass(1));
    }
    Ok(labels)
}

fn shape_of(trips: &[MicroTrip]) -> Result<(usize, usize), PipelineError> {
    let w = trips[0].window_len();
    let c = trips[0].channels();
    if w == 0 || c == 0 {
        return Err(PipelineError::Shape("empty sequence".into()));
    }
    if let Some(t) = trips
        .iter()
        .find(|t| t.window_len() != w || t.sequence.iter().any(|r| r.len() != c))
    {
        return Err(PipelineError::Shape(format!(
            "sequence of shape {}x{} among {w}x{c} trips",
            t.window_len(),
            t.channels()
        )));
    }
    Ok((w, c))
}

/// Stage 1: input normalization statistics and encoder training.
pub fn fit_encoder(train: &[MicroTrip], config: &PipelineConfig) -> Result<EncoderStage, PipelineError> {
    config.validate()?;
    let labels = labels_of(train)?;
    let (w, c) = shape_of(train)?;
    let input = InputTransform::fit(config.input_norm, train)?;
    let enc_config = EncoderConfig {
        seq_len: w,
        input_channels: c,
        ..config.encoder.clone()
    };
    let model = EncoderModel::new(enc_config)?;
    let batch = TrainingBatch::new(input.apply_all(train), labels)?;
    let outcome = encoder::train(&model, &batch, &config.train)?;
    Ok(EncoderStage {
        input,
        model: outcome.model,
        loss_history: outcome.loss_history,
    })
}

pub fn fit_pipeline(train: &[MicroTrip], config: &PipelineConfig) -> Result<FittedPipeline, PipelineError> {
    let stage = if config.variant.uses_encoder() {
        Some(fit_encoder(train, config)?)
    } else {
        None
    };
    fit_pipeline_with_encoder(train, config, stage.as_ref())
}

/// Fits the variant's head on top of an already trained encoder, so several
/// variants can share one stage-1 run. `stage` is ignored by `sv_raw` and
/// required by the other variants.
pub fn fit_pipeline_with_encoder(
    train: &[MicroTrip],
    config: &PipelineConfig,
    stage: Option<&EncoderStage>,
) -> Result<FittedPipeline, PipelineError> {
    config.validate()?;
    let labels = labels_of(train)?;
    shape_of(train)?;

    let (input, encoder, encoder_loss) = match (config.variant.uses_encoder(), stage) {
        (true, Some(s)) => (s.input.clone(), Some(s.model.clone()), s.loss_history.clone()),
        (true, None) => {
            return Err(PipelineError::InvalidConfig(
                "variant requires a trained encoder".into(),
            ))
        }
        (false, _) => (InputTransform::fit(config.input_norm, train)?, None, Vec::new()),
    };

    let mut fitted = FittedPipeline {
        config: config.clone(),
        input,
        encoder,
        encoder_loss,
        glm: None,
        report: None,
    };
    if !config.variant.uses_glm() {
        return Ok(fitted);
    }

    let base = fitted.base_features(train)?;
    let base_dim = base[0].len();
    let expanded = base
        .iter()
        .map(|phi| power_expand(phi, config.k))
        .collect::<Result<Vec<_>, _>>()?;
    let standardizer = if config.standardize {
        Standardizer::fit(&expanded)
    } else {
        Standardizer::identity(expanded[0].len())
    };
    let rows: Vec<Vec<f64>> = expanded.iter().map(|r| standardizer.apply(r)).collect();
    let obs: Vec<BinaryObservation> = labels.iter().map(|&z| BinaryObservation::from(z == 1)).collect();
    let data = ObservationSet::augmented(&rows, &obs)?;

    let excitation = check_excitation(data.features())?;
    let trace = excitation.trace();
    let lambda_max = nalgebra::SymmetricEigen::new(excitation.matrix())
        .eigenvalues
        .max();
    if !(excitation.lambda_min > RANK_RTOL * trace) {
        return Err(PipelineError::Excitation {
            lambda_min: excitation.lambda_min,
        });
    }
    let mut glm_config = config.glm.clone();
    if glm_config.ridge == 0.0 && excitation.lambda_min < JITTER_RCOND * lambda_max {
        glm_config.ridge = 1e-8 * trace / data.dim() as f64;
    }

    let init = SetValuedModel::augmented(vec![0.0; data.dim()])?;
    let report = fit_em(&data, &init, &glm_config)?;
    let model = SetValuedModel::augmented(report.theta_hat.clone())?;
    fitted.glm = Some(GlmStage {
        k: config.k,
        base_dim,
        standardizer,
        model,
        ridge: glm_config.ridge,
    });
    fitted.report = Some(report);
    Ok(fitted)
}

impl FittedPipeline {
    /// Encoder features or raw summaries, before power expansion.
    fn base_features(&self, trips: &[MicroTrip]) -> Result<Vec<Vec<f64>>, PipelineError> {
        let inputs = self.input.apply_all(trips);
        match (&self.encoder, self.config.variant) {
            (Some(enc), Variant::Svtn | Variant::TransformerOnly) => {
                Ok(encoder::extract_features(enc, &inputs)?)
            }
            (_, Variant::SvRaw) => {
                let c = self.input.channels();
                Ok(inputs.iter().map(|x| raw_summary(x, c)).collect())
            }
            (None, _) => Err(PipelineError::Artifact("encoder missing".into())),
        }
    }

    fn check_trips(&self, trips: &[MicroTrip]) -> Result<(), PipelineError> {
        let c = self.input.channels();
        let w = self.encoder.as_ref().map(|e| e.config.seq_len);
        for t in trips {
            if t.channels() != c || t.sequence.iter().any(|r| r.len() != c) {
                return Err(PipelineError::FeatureDim {
                    expected: c,
                    found: t.channels(),
                });
            }
            if let Some(w) = w {
                if t.window_len() != w {
                    return Err(PipelineError::FeatureDim {
                        expected: w * c,
                        found: t.window_len() * c,
                    });
                }
            }
        }
        Ok(())
    }

    /// High-emission probabilities for each trip.
    pub fn probabilities(&self, trips: &[MicroTrip]) -> Result<Vec<f64>, PipelineError> {
        if trips.is_empty() {
            return Ok(Vec::new());
        }
        self.check_trips(trips)?;
        match (&self.glm, self.config.variant) {
            (None, Variant::TransformerOnly) => {
                let enc = self
                    .encoder
                    .as_ref()
                    .ok_or_else(|| PipelineError::Artifact("encoder missing".into()))?;
                let out = encoder::forward(enc, &self.input.apply_all(trips))?;
                Ok(out.logits.iter().map(|&z| encoder::sigmoid(z)).collect())
            }
            (Some(glm), _) => {
                let base = self.base_features(trips)?;
                base.iter()
                    .map(|phi| {
                        if phi.len() != glm.base_dim {
                            return Err(PipelineError::FeatureDim {
                                expected: glm.base_dim,
                                found: phi.len(),
                            });
                        }
                        let x = glm.standardizer.apply(&power_expand(phi, glm.k)?);
                        Ok(prob_s1(&glm.model, &augment(&x)?)?)
                    })
                    .collect()
            }
            (None, _) => Err(PipelineError::Artifact("GLM stage missing".into())),
        }
    }
}

/// Labels (`prob ≥ p*` is positive) and probabilities. Empty input gives
/// empty output.
pub fn predict_pipeline(fitted: &FittedPipeline, trips: &[MicroTrip]) -> Result<Prediction, PipelineError> {
    let probabilities = fitted.probabilities(trips)?;
    let labels = probabilities
        .iter()
        .map(|&p| decide(p, fitted.config.p_star).as_u8())
        .collect();
    Ok(Prediction {
        labels,
        probabilities,
    })
}

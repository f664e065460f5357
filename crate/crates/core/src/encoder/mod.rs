//! Small transformer encoder with hand-derived gradients.
//!
//! A micro-trip `X` (`seq_len × input_channels`) is embedded by a linear
//! projection plus learned positional embeddings, passed through
//! `n_layers` pre-norm blocks (multi-head self-attention and a GELU
//! feed-forward, each residual), normalized, mean-pooled over positions and
//! projected to the feature vector `φ = T(X)`. A scalar logit head on top of
//! `φ` is trained with binary cross-entropy on logits.
//!
//! Everything runs in `f64` so gradients can be checked against finite
//! differences; weights are kept `f32`-representable after initialization
//! and training so the binary model file round-trips exactly.

mod forward;
mod io;
mod params;
mod train;

pub use io::{read_model, write_model, FORMAT_VERSION, MAGIC};
pub use params::{Block, EncoderParams, LayerNorm, Linear};
pub use train::{train, TrainConfig, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use forward::{backward_sample, forward_sample};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("labels must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("empty dataset")]
    Empty,
    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },
    #[error("training diverged in epoch {epoch}; last good weights retained")]
    Diverged {
        epoch: usize,
        last_good: Box<EncoderModel>,
        loss_history: Vec<f64>,
    },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_channels: 4,
            seq_len: 60,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 32,
            feature_dim: 8,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let dims = [
            ("input_channels", self.input_channels),
            ("seq_len", self.seq_len),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(EncoderError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.feature_dim > self.d_model {
            return Err(EncoderError::InvalidConfig(format!(
                "feature_dim {} exceeds d_model {}",
                self.feature_dim, self.d_model
            )));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.seq_len * self.input_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

impl EncoderModel {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = EncoderParams::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    /// All weights zero, including layer-norm scales.
    pub fn zeros(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let params = EncoderParams::zeros(&config);
        Ok(Self { config, params })
    }
}

/// Micro-trip sequences, each flattened row-major as `seq_len × input_channels`,
/// with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl TrainingBatch {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, EncoderError> {
        if inputs.len() != labels.len() {
            return Err(EncoderError::Shape {
                what: "labels",
                expected: inputs.len(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&z| z > 1) {
            return Err(EncoderError::InvalidLabel(bad));
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite { layer: 0 });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `N × feature_dim`.
    pub features: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

fn check_inputs(model: &EncoderModel, inputs: &[Vec<f64>]) -> Result<(), EncoderError> {
    let expected = model.config.input_len();
    for x in inputs {
        if x.len() != expected {
            return Err(EncoderError::Shape {
                what: "input sequence",
                expected,
                found: x.len(),
            });
        }
    }
    Ok(())
}

pub fn forward(model: &EncoderModel, inputs: &[Vec<f64>]) -> Result<ForwardOutput, EncoderError> {
    check_inputs(model, inputs)?;
    let mut features = Vec::with_capacity(inputs.len());
    let mut logits = Vec::with_capacity(inputs.len());
    for x in inputs {
        let cache = forward_sample(&model.params, &model.config, x)?;
        logits.push(cache.logit);
        features.push(cache.feature);
    }
    Ok(ForwardOutput { features, logits })
}

/// Feature vectors only; the logit head is not used.
pub fn extract_features(model: &EncoderModel, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EncoderError> {
    Ok(forward(model, inputs)?.features)
}

/// `-log σ(x)` for label 1 and `-log(1 - σ(x))` for label 0, stable for
/// any `x`.
fn sample_loss(logit: f64, z: u8, pos_weight: f64) -> f64 {
    let softplus_neg = (-logit.abs()).exp().ln_1p();
    let neg_log_sig = (-logit).max(0.0) + softplus_neg;
    let neg_log_one_minus = logit.max(0.0) + softplus_neg;
    if z == 1 {
        pos_weight * neg_log_sig
    } else {
        neg_log_one_minus
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits.
pub fn bce_with_logits(logits: &[f64], labels: &[u8]) -> Result<f64, EncoderError> {
    weighted_bce_with_logits(logits, labels, 1.0)
}

/// Same as [`bce_with_logits`] with positive samples weighted by `pos_weight`.
pub fn weighted_bce_with_logits(logits: &[f64], labels: &[u8], pos_weight: f64) -> Result<f64, EncoderError> {
    if logits.len() != labels.len() {
        return Err(EncoderError::Shape {
            what: "labels",
            expected: logits.len(),
            found: labels.len(),
        });
    }
    if logits.is_empty() {
        return Err(EncoderError::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&z| z > 1) {
        return Err(EncoderError::InvalidLabel(bad));
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&x, &z)| sample_loss(x, z, pos_weight))
        .sum();
    Ok(total / logits.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub grads: EncoderParams,
}

/// Exact gradient of the mean BCE-with-logits loss over `batch`.
pub fn backward(model: &EncoderModel, batch: &TrainingBatch) -> Result<Gradient, EncoderError> {
    backward_weighted(model, batch, 1.0)
}

pub fn backward_weighted(
    model: &EncoderModel,
    batch: &TrainingBatch,
    pos_weight: f64,
) -> Result<Gradient, EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::Empty);
    }
    check_inputs(model, &batch.inputs)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut grads = model.params.zeros_like();
    let losses = accumulate(model, batch, &idx, pos_weight, &mut grads)?;
    Ok(Gradient {
        loss: losses.iter().sum::<f64>() / batch.len() as f64,
        grads,
    })
}

/// Adds the gradient of the mean loss over `batch[idx]` into `grads` and
/// returns the per-sample losses in `idx` order.
pub(crate) fn accumulate(
    model: &EncoderModel,
    batch: &TrainingBatch,
    idx: &[usize],
    pos_weight: f64,
    grads: &mut EncoderParams,
) -> Result<Vec<f64>, EncoderError> {
    let n = idx.len() as f64;
    let mut losses = Vec::with_capacity(idx.len());
    for &i in idx {
        let cache = forward_sample(&model.params, &model.config, &batch.inputs[i])?;
        let z = batch.labels[i];
        losses.push(sample_loss(cache.logit, z, pos_weight));
        let s = sigmoid(cache.logit);
        let dlogit = if z == 1 { pos_weight * (s - 1.0) } else { s } / n;
        backward_sample(&model.params, &model.config, &cache, dlogit, grads);
    }
    Ok(losses)
}

//! Minibatch SGD on the mean BCE-with-logits loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accumulate, EncoderError, EncoderModel, TrainingBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Weight positive samples by `N_neg / N_pos` in the loss.
    pub balance_classes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.05,
            batch_size: 32,
            seed: 0,
            balance_classes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    /// Mean per-sample loss seen during each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains a copy of `model`. Deterministic given `(model, data, config)`.
///
/// Weights are rounded to `f32` once training ends. A non-finite loss or
/// weight aborts with [`EncoderError::Diverged`], carrying the weights from
/// the start of the failing epoch.
pub fn train(
    model: &EncoderModel,
    data: &TrainingBatch,
    config: &TrainConfig,
) -> Result<TrainOutcome, EncoderError> {
    if data.is_empty() {
        return Err(EncoderError::Empty);
    }
    if config.batch_size == 0 {
        return Err(EncoderError::InvalidConfig("batch_size must be at least 1".into()));
    }
    let expected = model.config.input_len();
    if let Some(x) = data.inputs.iter().find(|x| x.len() != expected) {
        return Err(EncoderError::Shape {
            what: "input sequence",
            expected,
            found: x.len(),
        });
    }
    let n = data.len();
    let n_pos = data.labels.iter().filter(|&&z| z == 1).count();
    let pos_weight = if config.balance_classes && n_pos > 0 {
        (n - n_pos) as f64 / n_pos as f64
    } else {
        1.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut current = model.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut seen = vec![0.0; n];

    for epoch in 0..config.epochs {
        let last_good = current.clone();
        let diverged = |history: &Vec<f64>| EncoderError::Diverged {
            epoch,
            last_good: Box::new(last_good.clone()),
            loss_history: history.clone(),
        };
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut grads = current.params.zeros_like();
            let losses = match accumulate(&current, data, chunk, pos_weight, &mut grads) {
                Ok(l) => l,
                Err(EncoderError::NonFinite { .. }) => return Err(diverged(&history)),
                Err(e) => return Err(e),
            };
            for (&i, l) in chunk.iter().zip(losses) {
                seen[i] = l;
            }
            if config.lr != 0.0 {
                current.params.axpy(-config.lr, &grads);
            }
            if !current.params.is_finite() {
                return Err(diverged(&history));
            }
        }
        // summed in sample order so the value does not depend on the shuffle
        let mean = seen.iter().sum::<f64>() / n as f64;
        if !mean.is_finite() {
            return Err(diverged(&history));
        }
        history.push(mean);
    }
    current.params.round_to_f32();
    Ok(TrainOutcome {
        model: current,
        loss_history: history,
    })
}

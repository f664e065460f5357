use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EmissionsError, MicroTrip, Provenance, Source};

/// Long-tailed synthetic micro-trip generator.
///
/// Each channel is a stationary AR(1) Gaussian process with marginal
/// standard deviation `noise`. Positive trips have every channel mean
/// shifted by `separation`; negatives are centred at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub positive_rate: f64,
    pub window: usize,
    pub channels: usize,
    pub separation: f64,
    pub noise: f64,
    pub ar_coef: f64,
    pub seed: u64,
    /// Refuse to generate when the classes would be identical.
    pub require_separable: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            positive_rate: 0.0228,
            window: 16,
            channels: 4,
            separation: 1.0,
            noise: 1.0,
            ar_coef: 0.5,
            seed: 0,
            require_separable: false,
        }
    }
}

impl SynthSpec {
    pub fn n_positive(&self) -> usize {
        (self.n_samples as f64 * self.positive_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), EmissionsError> {
        let bad = |m: &str| Err(EmissionsError::InvalidSpec(m.to_string()));
        if self.n_samples == 0 || self.window == 0 || self.channels == 0 {
            return bad("n_samples, window and channels must be positive");
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad("positive_rate must lie in (0, 1)");
        }
        if !self.separation.is_finite() {
            return bad("separation must be finite");
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return bad("noise must be positive");
        }
        if !(self.ar_coef.abs() < 1.0) {
            return bad("ar_coef must lie in (-1, 1)");
        }
        if self.require_separable && self.separation == 0.0 {
            return bad("separation is zero but separable classes were required");
        }
        Ok(())
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<MicroTrip>, EmissionsError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..spec.n_samples).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![0u8; spec.n_samples];
    for &i in &order[..spec.n_positive()] {
        labels[i] = 1;
    }

    let a = spec.ar_coef;
    let innovation = spec.noise * (1.0 - a * a).sqrt();
    let trips = labels
        .into_iter()
        .map(|label| {
            let mean = if label == 1 { spec.separation } else { 0.0 };
            let mut sequence = vec![vec![0.0; spec.channels]; spec.window];
            for c in 0..spec.channels {
                let z: f64 = rng.sample(StandardNormal);
                let mut x = spec.noise * z;
                for row in sequence.iter_mut() {
                    row[c] = mean + x;
                    let z: f64 = rng.sample(StandardNormal);
                    x = a * x + innovation * z;
                }
            }
            MicroTrip {
                sequence,
                ef_mean: None,
                label,
                provenance: Provenance {
                    source: Source::Synthetic,
                    window: spec.window,
                    stride: None,
                    vehicle_id: None,
                    start_timestamp: None,
                    seed: Some(spec.seed),
                },
            }
        })
        .collect();
    Ok(trips)
}

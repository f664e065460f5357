use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::emissions::MicroTrip;

/// `[φ₁, φ₁², …, φ₁ᵏ, φ₂, …, φ₂ᵏ, …]`.
pub fn power_expand(phi: &[f64], k: usize) -> Result<Vec<f64>, PipelineError> {
    if k == 0 {
        return Err(PipelineError::InvalidConfig("k must be at least 1".into()));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::NonFinite("features"));
    }
    let mut out = Vec::with_capacity(phi.len() * k);
    for &x in phi {
        let mut p = x;
        out.push(p);
        for _ in 1..k {
            p *= x;
            out.push(p);
        }
    }
    Ok(out)
}

/// Per-channel mean and population standard deviation of one flattened
/// window: `[mean_1, …, mean_c, std_1, …, std_c]`.
pub fn raw_summary(x: &[f64], channels: usize) -> Vec<f64> {
    let rows = x.len() / channels;
    let mut out = vec![0.0; 2 * channels];
    for c in 0..channels {
        let mean = (0..rows).map(|r| x[r * channels + c]).sum::<f64>() / rows as f64;
        let var = (0..rows)
            .map(|r| (x[r * channels + c] - mean).powi(2))
            .sum::<f64>()
            / rows as f64;
        out[c] = mean;
        out[channels + c] = var.sqrt();
    }
    out
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

/// Per-dimension z-scoring with fixed statistics. Constant dimensions get
/// unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let (mean, std) = (0..dim)
            .map(|j| mean_std(rows.iter().map(move |r| r[j])))
            .unzip();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// How raw micro-trip channels are scaled before the encoder or the raw
/// summaries see them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    /// Channel statistics pooled over all training windows.
    #[default]
    Global,
    /// Each window z-scored by its own channel statistics. Removes any
    /// level difference between windows.
    PerWindow,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub norm: InputNorm,
    pub channels: usize,
    /// Training-set channel statistics, used by [`InputNorm::Global`].
    pub stats: Standardizer,
}

impl InputTransform {
    pub fn fit(norm: InputNorm, trips: &[MicroTrip]) -> Result<Self, PipelineError> {
        let channels = trips.first().map_or(0, MicroTrip::channels);
        if channels == 0 {
            return Err(PipelineError::Empty);
        }
        let stats = match norm {
            InputNorm::Global => {
                let rows: Vec<Vec<f64>> = trips.iter().flat_map(|t| t.sequence.iter().cloned()).collect();
                Standardizer::fit(&rows)
            }
            _ => Standardizer::identity(channels),
        };
        Ok(Self {
            norm,
            channels,
            stats,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Flattened, normalized `window × channels` input.
    pub fn apply(&self, trip: &MicroTrip) -> Vec<f64> {
        match self.norm {
            InputNorm::Global => trip.sequence.iter().flat_map(|r| self.stats.apply(r)).collect(),
            InputNorm::None => trip.flat(),
            InputNorm::PerWindow => {
                let local = Standardizer::fit(&trip.sequence);
                trip.sequence.iter().flat_map(|r| local.apply(r)).collect()
            }
        }
    }

    pub fn apply_all(&self, trips: &[MicroTrip]) -> Vec<Vec<f64>> {
        trips.iter().map(|t| self.apply(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn expansion_examples() {
        assert_eq!(power_expand(&[2.0, -1.0], 3).unwrap(), vec![2.0, 4.0, 8.0, -1.0, 1.0, -1.0]);
        assert_eq!(
            power_expand(&[0.5], 5).unwrap(),
            vec![0.5, 0.25, 0.125, 0.0625, 0.03125]
        );
        assert!(power_expand(&[f64::NAN], 2).is_err());
        assert!(power_expand(&[1.0], 0).is_err());
    }

    #[test]
    fn raw_summary_layout() {
        // two rows, two channels
        let s = raw_summary(&[1.0, 10.0, 3.0, 10.0], 2);
        assert_eq!(s, vec![2.0, 10.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_column_gets_unit_scale() {
        let st = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(st.mean, vec![2.0, 5.0]);
        assert_eq!(st.std, vec![1.0, 1.0]);
        assert_eq!(st.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn expansion_matches_per_element_oracle(phi in proptest::collection::vec(-3.0f64..3.0, 1..6), k in 1usize..8) {
            let out = power_expand(&phi, k).unwrap();
            prop_assert_eq!(out.len(), phi.len() * k);
            for (i, &x) in phi.iter().enumerate() {
                for j in 1..=k {
                    let oracle = x.powi(j as i32);
                    let got = out[i * k + j - 1];
                    prop_assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
                }
            }
            prop_assert_eq!(power_expand(&phi, 1).unwrap(), phi);
        }
    }
}

//! Emission-ratio sweep: regenerate synthetic data at several
//! normal-to-high-emission ratios and compare model variants over repeated
//! trials.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{repeated_trials, ClassMetrics, MetricsError, TrialSummary};
use crate::emissions::{stratified_split, synth_generate, SplitSpec, SynthSpec};
use crate::pipeline::{
    fit_encoder, fit_pipeline_with_encoder, predict_pipeline, PipelineConfig, Variant,
};
use crate::seed::derive_seed;

/// A variant and its power order, e.g. `svtn(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub variant: Variant,
    #[serde(default = "one")]
    pub k: usize,
}

fn one() -> usize {
    1
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            Variant::TransformerOnly => write!(f, "transformer_only"),
            Variant::Svtn => write!(f, "svtn({})", self.k),
            Variant::SvRaw => write!(f, "sv_raw({})", self.k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// `positive_rate` is overridden per ratio; `seed` per trial.
    pub generator: SynthSpec,
    /// Normal-to-high-emission sample ratios.
    pub ratios: Vec<f64>,
    pub variants: Vec<VariantSpec>,
    pub trials: usize,
    pub seed: u64,
    pub split: SplitSpec,
    /// Shared encoder, training and GLM settings. `variant` and `k` are
    /// taken from `variants`; seeds are derived per trial.
    pub pipeline: PipelineConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            generator: SynthSpec::default(),
            ratios: vec![10.0, 20.0, 43.0],
            variants: vec![
                VariantSpec { variant: Variant::TransformerOnly, k: 1 },
                VariantSpec { variant: Variant::Svtn, k: 1 },
                VariantSpec { variant: Variant::Svtn, k: 5 },
            ],
            trials: 20,
            seed: 0,
            split: SplitSpec::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Positive rate `1 / (1 + ratio)`.
pub fn ratio_positive_rate(ratio: f64) -> f64 {
    1.0 / (1.0 + ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub variant: String,
    pub metric: String,
    /// `None` when the metric was undefined in every trial.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub ratio: f64,
    pub n_positive: usize,
    pub summary: TrialSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub ratios: Vec<RatioResult>,
}

impl SweepTable {
    pub fn get(&self, ratio: f64, variant: &str, metric: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.ratio == ratio && r.variant == variant && r.metric == metric)
    }
}

pub const SWEEP_METRICS: [&str; 2] = ["recall", "f1"];

fn check_ratio(spec: &SweepSpec, ratio: f64) -> Result<usize, MetricsError> {
    let invalid = |reason: String| MetricsError::InvalidRatio { ratio, reason };
    if !(ratio.is_finite() && ratio > 1.0) {
        return Err(invalid("ratio must exceed 1".into()));
    }
    let gen = SynthSpec {
        positive_rate: ratio_positive_rate(ratio),
        ..spec.generator.clone()
    };
    let n_pos = gen.n_positive();
    let train_pos = if n_pos >= 2 {
        ((spec.split.train_frac * n_pos as f64).round() as usize).clamp(1, n_pos - 1)
    } else {
        n_pos
    };
    if train_pos < 2 {
        return Err(invalid(format!(
            "{n_pos} positives leave {train_pos} in the training split"
        )));
    }
    Ok(n_pos)
}

/// Metrics of every variant on one freshly generated dataset.
fn run_trial(
    spec: &SweepSpec,
    ratio: f64,
    seed: u64,
) -> Result<BTreeMap<String, Option<f64>>, String> {
    let gen = SynthSpec {
        positive_rate: ratio_positive_rate(ratio),
        seed: derive_seed(seed, 0),
        ..spec.generator.clone()
    };
    let trips = synth_generate(&gen).map_err(|e| e.to_string())?;
    let split = SplitSpec {
        seed: derive_seed(seed, 1),
        ..spec.split
    };
    let (train, test) = stratified_split(&trips, &split).map_err(|e| e.to_string())?;
    let truth: Vec<u8> = test.iter().map(|t| t.label).collect();

    let mut base = spec.pipeline.clone();
    base.encoder.seed = derive_seed(seed, 2);
    base.train.seed = derive_seed(seed, 3);
    let stage = if spec.variants.iter().any(|v| v.variant.uses_encoder()) {
        let cfg = PipelineConfig {
            variant: Variant::Svtn,
            ..base.clone()
        };
        Some(fit_encoder(&train, &cfg).map_err(|e| e.to_string())?)
    } else {
        None
    };

    let mut out = BTreeMap::new();
    for v in &spec.variants {
        let cfg = PipelineConfig {
            variant: v.variant,
            k: v.k,
            ..base.clone()
        };
        let fitted = fit_pipeline_with_encoder(&train, &cfg, stage.as_ref())
            .map_err(|e| format!("{v}: {e}"))?;
        let pred = predict_pipeline(&fitted, &test).map_err(|e| format!("{v}: {e}"))?;
        let m = ClassMetrics::from_labels(&truth, &pred.labels).map_err(|e| e.to_string())?;
        out.insert(format!("{v}/recall"), m.recall);
        out.insert(format!("{v}/precision"), m.precision);
        out.insert(format!("{v}/f1"), m.f1);
    }
    Ok(out)
}

/// Runs `spec.trials` trials per ratio. Trial `i` at ratio index `j` uses
/// root seed `derive_seed(spec.seed, j)` and trial seed
/// `derive_seed(root, i)`.
pub fn ratio_sweep(spec: &SweepSpec) -> Result<SweepTable, MetricsError> {
    if spec.trials == 0 {
        return Err(MetricsError::NoTrials);
    }
    let counts = spec
        .ratios
        .iter()
        .map(|&r| check_ratio(spec, r))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for (j, (&ratio, &n_positive)) in spec.ratios.iter().zip(&counts).enumerate() {
        let root = derive_seed(spec.seed, j as u64);
        let summary = repeated_trials(spec.trials, root, |seed| run_trial(spec, ratio, seed))?;
        for v in &spec.variants {
            for metric in SWEEP_METRICS {
                let (mean, std, n) = match summary.stats.get(&format!("{v}/{metric}")) {
                    Some(s) => (Some(s.mean), Some(s.std), s.n_trials),
                    None => (None, None, 0),
                };
                rows.push(SweepRow {
                    ratio,
                    variant: v.to_string(),
                    metric: metric.to_string(),
                    mean,
                    std,
                    n_trials: n,
                });
            }
        }
        ratios.push(RatioResult {
            ratio,
            n_positive,
            summary,
        });
    }
    Ok(SweepTable { rows, ratios })
}

/// `ratio,variant,metric,mean,std,n_trials`, one line per row.
pub fn sweep_to_csv(table: &SweepTable) -> String {
    let mut s = String::from("ratio,variant,metric,mean,std,n_trials\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &table.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.ratio,
            r.variant,
            r.metric,
            opt(r.mean),
            opt(r.std),
            r.n_trials
        ));
    }
    s
}

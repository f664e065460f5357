use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use svtn_core::emissions::{SplitSpec, SynthSpec, DEFAULT_WINDOW};
use svtn_core::metrics::VariantSpec;
use svtn_core::pipeline::{PipelineConfig, Variant};
use svtn_core::seed::derive_seed;
use svtn_core::setvalued_glm::ConsistencySpec;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub window: usize,
    /// Defaults to `window` (non-overlapping).
    pub stride: Option<usize>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ratios: Vec<f64>,
    pub variants: Vec<VariantSpec>,
    pub trials: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ratios: vec![10.0, 20.0, 43.0],
            variants: vec![
                VariantSpec { variant: Variant::TransformerOnly, k: 1 },
                VariantSpec { variant: Variant::Svtn, k: 1 },
                VariantSpec { variant: Variant::Svtn, k: 5 },
            ],
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    /// Also run the Monte Carlo consistency experiment.
    pub consistency: bool,
    pub experiment: ConsistencySpec,
}

/// Declarative description of a run. Every sub-seed is derived from `seed`,
/// so the seeds inside the sections are overwritten on resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Micro-trip JSON-lines file for `fit`; synthetic data when absent.
    pub dataset: Option<PathBuf>,
    pub generator: SynthSpec,
    pub ingest: IngestSection,
    pub split: SplitSpec,
    pub pipeline: PipelineConfig,
    pub sweep: SweepSection,
    pub diagnose: DiagnoseSection,
}

/// Seeds actually used, embedded in every output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub generator: u64,
    pub split: u64,
    pub encoder: u64,
    pub train: u64,
    pub consistency: u64,
}

impl Seeds {
    pub fn from_root(root: u64) -> Self {
        Self {
            root,
            generator: derive_seed(root, 0),
            split: derive_seed(root, 1),
            encoder: derive_seed(root, 2),
            train: derive_seed(root, 3),
            consistency: derive_seed(root, 4),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the root seed to every section and validates.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<(Self, Seeds), CliError> {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        let seeds = Seeds::from_root(self.seed);
        self.generator.seed = seeds.generator;
        self.split.seed = seeds.split;
        self.pipeline.encoder.seed = seeds.encoder;
        self.pipeline.train.seed = seeds.train;
        self.diagnose.experiment.seed = seeds.consistency;
        self.validate()?;
        Ok((self, seeds))
    }

    fn validate(&self) -> Result<(), CliError> {
        self.generator.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let cfg_err = |m: String| Err(CliError::Config(m));
        if !(self.split.train_frac > 0.0 && self.split.train_frac < 1.0) {
            return cfg_err(format!("split.train_frac must lie in (0, 1), got {}", self.split.train_frac));
        }
        if self.ingest.window == 0 || self.ingest.stride == Some(0) {
            return cfg_err("ingest.window and ingest.stride must be positive".into());
        }
        if self.sweep.trials == 0 || self.sweep.variants.is_empty() || self.sweep.ratios.is_empty() {
            return cfg_err("sweep needs at least one trial, variant and ratio".into());
        }
        if self.sweep.variants.iter().any(|v| v.k == 0) {
            return cfg_err("sweep variant k must be at least 1".into());
        }
        if self.pipeline.train.batch_size == 0 {
            return cfg_err("pipeline.train.batch_size must be at least 1".into());
        }
        self.pipeline
            .encoder
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the resolved configuration's JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

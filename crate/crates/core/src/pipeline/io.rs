use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FittedPipeline, GlmStage, InputTransform, PipelineConfig, PipelineError};
use crate::encoder::{read_model, write_model};

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const ENCODER: &str = "encoder.bin";
const GLM: &str = "glm.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    manifest_version: u32,
    crate_version: String,
    config: PipelineConfig,
    input: InputTransform,
    encoder_file: Option<String>,
    glm_file: Option<String>,
    encoder_loss: Vec<f64>,
    encoder_seed: u64,
    train_seed: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `manifest.json`, plus `encoder.bin` and `glm.json` when the
/// variant has those stages. The fit report is not part of the directory.
pub fn save_pipeline(dir: impl AsRef<Path>, fitted: &FittedPipeline) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    if let Some(enc) = &fitted.encoder {
        let mut w = BufWriter::new(File::create(dir.join(ENCODER))?);
        write_model(&mut w, enc)?;
        w.flush()?;
    }
    if let Some(glm) = &fitted.glm {
        write_json(&dir.join(GLM), glm)?;
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: fitted.config.clone(),
        input: fitted.input.clone(),
        encoder_file: fitted.encoder.as_ref().map(|_| ENCODER.to_string()),
        glm_file: fitted.glm.as_ref().map(|_| GLM.to_string()),
        encoder_loss: fitted.encoder_loss.clone(),
        encoder_seed: fitted.config.encoder.seed,
        train_seed: fitted.config.train.seed,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_pipeline(dir: impl AsRef<Path>) -> Result<FittedPipeline, PipelineError> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST))?))?;
    if manifest.manifest_version != MANIFEST_VERSION {
        return Err(PipelineError::Artifact(format!(
            "unsupported manifest version {}",
            manifest.manifest_version
        )));
    }
    manifest.config.validate()?;
    let variant = manifest.config.variant;
    let encoder = match (&manifest.encoder_file, variant.uses_encoder()) {
        (Some(f), true) => Some(read_model(BufReader::new(File::open(dir.join(f))?))?),
        (None, false) => None,
        _ => return Err(PipelineError::Artifact("encoder file does not match variant".into())),
    };
    let glm: Option<GlmStage> = match (&manifest.glm_file, variant.uses_glm()) {
        (Some(f), true) => Some(serde_json::from_reader(BufReader::new(File::open(dir.join(f))?))?),
        (None, false) => None,
        _ => return Err(PipelineError::Artifact("GLM file does not match variant".into())),
    };
    if let Some(enc) = &encoder {
        if enc.config.input_channels != manifest.input.channels {
            return Err(PipelineError::Artifact(format!(
                "encoder expects {} channels, input transform has {}",
                enc.config.input_channels, manifest.input.channels
            )));
        }
    }
    if let Some(g) = &glm {
        let dim = g.base_dim * g.k;
        if g.standardizer.mean.len() != dim || g.model.theta.len() != dim + 1 {
            return Err(PipelineError::Artifact("GLM dimensions are inconsistent".into()));
        }
    }
    Ok(FittedPipeline {
        config: manifest.config,
        input: manifest.input,
        encoder,
        encoder_loss: manifest.encoder_loss,
        glm,
        report: None,
    })
}

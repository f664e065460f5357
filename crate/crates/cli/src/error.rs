use svtn_core::emissions::EmissionsError;
use svtn_core::encoder::EncoderError;
use svtn_core::metrics::MetricsError;
use svtn_core::pipeline::PipelineError;
use svtn_core::setvalued_glm::GlmError;
use thiserror::Error;

/// Command failure, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GlmError> for CliError {
    fn from(e: GlmError) -> Self {
        let m = e.to_string();
        match e {
            GlmError::InvalidNoiseScale(_) | GlmError::InvalidExperiment(_) => CliError::Config(m),
            GlmError::Empty | GlmError::DimensionMismatch { .. } | GlmError::InvalidLabel(_) => {
                CliError::Data(m)
            }
            GlmError::NonFinite(_)
            | GlmError::Excitation { .. }
            | GlmError::TooFewIterates(_)
            | GlmError::InvalidContraction(_)
            | GlmError::UnusableBound(_) => CliError::Numerical(m),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        let m = e.to_string();
        match e {
            EncoderError::InvalidConfig(_) => CliError::Config(m),
            EncoderError::NonFinite { .. } | EncoderError::Diverged { .. } => CliError::Numerical(m),
            _ => CliError::Data(m),
        }
    }
}

impl From<EmissionsError> for CliError {
    fn from(e: EmissionsError) -> Self {
        let m = e.to_string();
        match e {
            EmissionsError::InvalidSpec(_)
            | EmissionsError::InvalidWindow { .. }
            | EmissionsError::InvalidFraction(_) => CliError::Config(m),
            _ => CliError::Data(m),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(m) => CliError::Config(m),
            PipelineError::Excitation { .. } | PipelineError::NonFinite(_) => {
                CliError::Numerical(e.to_string())
            }
            PipelineError::Encoder(e) => e.into(),
            PipelineError::Glm(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let m = e.to_string();
        match e {
            MetricsError::NoTrials | MetricsError::InvalidRatio { .. } => CliError::Config(m),
            MetricsError::AllTrialsFailed(_) => CliError::Numerical(m),
            MetricsError::LengthMismatch { .. } | MetricsError::NonBinary { .. } => CliError::Data(m),
        }
    }
}

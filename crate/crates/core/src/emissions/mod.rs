//! OBD telemetry, specific NOx emission and micro-trip datasets.

mod io;
mod split;
mod synth;
mod window;

pub use io::{
    load_csv, read_trips_jsonl, write_csv, write_trips_jsonl, CsvLoad, MalformedRow, CSV_HEADER,
};
pub use split::{split_indices, stratified_split, SplitSpec};
pub use synth::{synth_generate, SynthSpec};
pub use window::{window, WindowOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Transient NOx limit, 460 mg/kWh, in the g/kWh units of [`ef_nox`].
pub const NOX_LIMIT_G_PER_KWH: f64 = 0.460;

/// Default micro-trip length for OBD windowing.
pub const DEFAULT_WINDOW: usize = 60;

#[derive(Debug, Error)]
pub enum EmissionsError {
    #[error("record has non-positive engine power (torque {ent}, speed {ens})")]
    NonPositivePower { ent: f64, ens: f64 },
    #[error("records for vehicle {0} are not sorted by timestamp")]
    Unsorted(String),
    #[error("invalid window: length {window}, stride {stride}")]
    InvalidWindow { window: usize, stride: usize },
    #[error("class {class} has {count} samples; at least 2 required")]
    ClassTooSmall { class: u8, count: usize },
    #[error("label {0} is not binary")]
    InvalidLabel(u8),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unexpected column `{found}` at position {position}, expected `{expected}`")]
    HeaderMismatch {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One OBD telemetry sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObdRecord {
    /// Seconds.
    pub timestamp: f64,
    pub vehicle_id: String,
    /// NOx concentration, ppm.
    pub c_nox: f64,
    /// Exhaust mass flow, kg/h.
    pub q_exh: f64,
    /// Engine net output torque, Nm.
    pub ent: f64,
    /// Engine speed, rpm.
    pub ens: f64,
}

impl ObdRecord {
    /// Whether a specific emission can be computed: positive torque and
    /// speed, nonnegative concentration and flow, all finite.
    pub fn is_valid_for_ef(&self) -> bool {
        [self.c_nox, self.q_exh, self.ent, self.ens]
            .iter()
            .all(|v| v.is_finite())
            && self.ent > 0.0
            && self.ens > 0.0
            && self.c_nox >= 0.0
            && self.q_exh >= 0.0
    }

    /// Channel vector fed to the encoder: `[c_nox, q_exh, ent, ens]`.
    pub fn channels(&self) -> [f64; 4] {
        [self.c_nox, self.q_exh, self.ent, self.ens]
    }
}

/// Specific NOx emission in g/kWh:
/// `0.001587 · c_NOx · Q_exh / (π · EnT · EnS / 1.08e6)`.
pub fn ef_nox(record: &ObdRecord) -> Result<f64, EmissionsError> {
    if !record.is_valid_for_ef() {
        return Err(EmissionsError::NonPositivePower {
            ent: record.ent,
            ens: record.ens,
        });
    }
    Ok(0.001587 * record.c_nox * record.q_exh
        / (std::f64::consts::PI * record.ent * record.ens / 1.08e6))
}

/// High-emission label: strictly above the transient limit.
pub fn is_high_emission(ef_g_per_kwh: f64) -> bool {
    ef_g_per_kwh > NOX_LIMIT_G_PER_KWH
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Obd,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub window: usize,
    pub stride: Option<usize>,
    pub vehicle_id: Option<String>,
    pub start_timestamp: Option<f64>,
    pub seed: Option<u64>,
}

/// A fixed-length window of consecutive samples, one classification input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroTrip {
    /// `window × channels`. For OBD data the channels are
    /// `[c_nox, q_exh, ent, ens]`.
    pub sequence: Vec<Vec<f64>>,
    /// Mean specific emission over the window (g/kWh); absent for synthetic
    /// trips, whose label is drawn directly.
    pub ef_mean: Option<f64>,
    pub label: u8,
    pub provenance: Provenance,
}

impl MicroTrip {
    pub fn window_len(&self) -> usize {
        self.sequence.len()
    }

    pub fn channels(&self) -> usize {
        self.sequence.first().map_or(0, Vec::len)
    }

    /// Row-major flattening, the encoder's input layout.
    pub fn flat(&self) -> Vec<f64> {
        self.sequence.iter().flatten().copied().collect()
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

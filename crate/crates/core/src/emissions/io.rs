use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{EmissionsError, MicroTrip, ObdRecord};

pub const CSV_HEADER: [&str; 6] = [
    "timestamp",
    "vehicle_id",
    "c_nox_ppm",
    "q_exh_kgph",
    "ent_nm",
    "ens_rpm",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MalformedRow {
    /// 1-based line number in the file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvLoad {
    pub records: Vec<ObdRecord>,
    pub malformed: Vec<MalformedRow>,
}

impl CsvLoad {
    /// Records that cannot enter a window (non-positive power and the like).
    pub fn invalid_for_ef(&self) -> usize {
        self.records.iter().filter(|r| !r.is_valid_for_ef()).count()
    }
}

fn parse_f64(field: &str, column: &str) -> Result<f64, String> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("column {column}: cannot parse `{field}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("column {column}: non-finite value `{field}`"))
    }
}

/// Reads OBD records. The header must match [`CSV_HEADER`] exactly; rows
/// that fail to parse are skipped and reported with their line numbers.
pub fn load_csv(path: impl AsRef<Path>) -> Result<CsvLoad, EmissionsError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    for (i, expected) in CSV_HEADER.iter().enumerate() {
        match header.get(i).map(str::trim) {
            None => return Err(EmissionsError::MissingColumn(expected.to_string())),
            Some(found) if found != *expected => {
                if !header.iter().any(|h| h.trim() == *expected) {
                    return Err(EmissionsError::MissingColumn(expected.to_string()));
                }
                return Err(EmissionsError::HeaderMismatch {
                    position: i,
                    expected: expected.to_string(),
                    found: found.to_string(),
                });
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = header.get(CSV_HEADER.len()) {
        return Err(EmissionsError::HeaderMismatch {
            position: CSV_HEADER.len(),
            expected: String::new(),
            found: extra.to_string(),
        });
    }

    let mut out = CsvLoad {
        records: Vec::new(),
        malformed: Vec::new(),
    };
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.malformed.push(MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != CSV_HEADER.len() {
            out.malformed.push(MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
            continue;
        }
        let parsed = (|| {
            Ok::<_, String>(ObdRecord {
                timestamp: parse_f64(&row[0], CSV_HEADER[0])?,
                vehicle_id: row[1].trim().to_string(),
                c_nox: parse_f64(&row[2], CSV_HEADER[2])?,
                q_exh: parse_f64(&row[3], CSV_HEADER[3])?,
                ent: parse_f64(&row[4], CSV_HEADER[4])?,
                ens: parse_f64(&row[5], CSV_HEADER[5])?,
            })
        })();
        match parsed {
            Ok(r) => out.records.push(r),
            Err(reason) => out.malformed.push(MalformedRow { line, reason }),
        }
    }
    Ok(out)
}

pub fn write_csv(path: impl AsRef<Path>, records: &[ObdRecord]) -> Result<(), EmissionsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.timestamp.to_string(),
            r.vehicle_id.clone(),
            r.c_nox.to_string(),
            r.q_exh.to_string(),
            r.ent.to_string(),
            r.ens.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trips_jsonl(path: impl AsRef<Path>, trips: &[MicroTrip]) -> Result<(), EmissionsError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in trips {
        serde_json::to_writer(&mut w, t).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trips_jsonl(path: impl AsRef<Path>) -> Result<Vec<MicroTrip>, EmissionsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut trips = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trip: MicroTrip = serde_json::from_str(&line).map_err(|e| EmissionsError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if trip.label > 1 {
            return Err(EmissionsError::Parse {
                line: i + 1,
                message: format!("label {} is not binary", trip.label),
            });
        }
        let width = trip.channels();
        if trip.sequence.iter().any(|row| row.len() != width) {
            return Err(EmissionsError::Parse {
                line: i + 1,
                message: "ragged sequence".into(),
            });
        }
        trips.push(trip);
    }
    Ok(trips)
}

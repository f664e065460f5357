use std::collections::BTreeMap;

use super::{ef_nox, is_high_emission, EmissionsError, MicroTrip, ObdRecord, Provenance, Source};

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutput {
    pub trips: Vec<MicroTrip>,
    /// Records whose specific emission could not be computed.
    pub invalid_records: usize,
    /// Valid records that did not fall inside any emitted window, either
    /// because their run was shorter than the window or because of the
    /// stride tail.
    pub uncovered_records: usize,
    /// Maximal valid runs shorter than the window.
    pub short_runs: usize,
}

/// Cuts per-vehicle records into micro-trips of `window` consecutive valid
/// samples.
///
/// Records are grouped by vehicle (vehicles visited in id order) and must be
/// sorted by timestamp within each vehicle. An invalid record breaks the
/// run; windows never straddle it. Each window is labelled by whether its
/// mean specific emission strictly exceeds the limit.
pub fn window(
    records: &[ObdRecord],
    window: usize,
    stride: usize,
) -> Result<WindowOutput, EmissionsError> {
    if window == 0 || stride == 0 {
        return Err(EmissionsError::InvalidWindow { window, stride });
    }
    let mut by_vehicle: BTreeMap<&str, Vec<&ObdRecord>> = BTreeMap::new();
    for r in records {
        by_vehicle.entry(r.vehicle_id.as_str()).or_default().push(r);
    }

    let mut out = WindowOutput {
        trips: Vec::new(),
        invalid_records: 0,
        uncovered_records: 0,
        short_runs: 0,
    };
    for (vehicle, recs) in by_vehicle {
        if recs.windows(2).any(|p| p[1].timestamp < p[0].timestamp) {
            return Err(EmissionsError::Unsorted(vehicle.to_string()));
        }
        let mut run: Vec<(&ObdRecord, f64)> = Vec::new();
        for r in recs {
            match ef_nox(r) {
                Ok(ef) => run.push((r, ef)),
                Err(_) => {
                    out.invalid_records += 1;
                    flush_run(&mut run, window, stride, &mut out);
                }
            }
        }
        flush_run(&mut run, window, stride, &mut out);
    }
    Ok(out)
}

fn flush_run(run: &mut Vec<(&ObdRecord, f64)>, w: usize, stride: usize, out: &mut WindowOutput) {
    let len = run.len();
    if len == 0 {
        return;
    }
    if len < w {
        out.short_runs += 1;
        out.uncovered_records += len;
        run.clear();
        return;
    }
    let count = (len - w) / stride + 1;
    let covered_end = (count - 1) * stride + w;
    out.uncovered_records += len - covered_end;
    for i in 0..count {
        let slice = &run[i * stride..i * stride + w];
        let ef_mean = slice.iter().map(|(_, ef)| ef).sum::<f64>() / w as f64;
        out.trips.push(MicroTrip {
            sequence: slice.iter().map(|(r, _)| r.channels().to_vec()).collect(),
            ef_mean: Some(ef_mean),
            label: u8::from(is_high_emission(ef_mean)),
            provenance: Provenance {
                source: Source::Obd,
                window: w,
                stride: Some(stride),
                vehicle_id: Some(slice[0].0.vehicle_id.clone()),
                start_timestamp: Some(slice[0].0.timestamp),
                seed: None,
            },
        });
    }
    run.clear();
}

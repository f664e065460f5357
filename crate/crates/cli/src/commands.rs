use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use svtn_core::emissions::{
    load_csv, read_trips_jsonl, stratified_split, synth_generate, window, write_trips_jsonl,
    MicroTrip,
};
use svtn_core::metrics::{
    ratio_sweep, sweep_to_csv, ClassMetrics, SweepSpec, SweepTable, VariantSpec,
};
use svtn_core::pipeline::{fit_pipeline, load_pipeline, predict_pipeline, save_pipeline};
use svtn_core::setvalued_glm::{
    check_bound, consistency_experiment, contraction_estimate, convergence_bound, BoundCheck,
    ConsistencyRow, EmTrace, FitReport,
};

use crate::config::{hex, RunConfig, Seeds};
use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "em_trace.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

pub struct Context {
    pub config: RunConfig,
    pub seeds: Seeds,
    pub config_hash: String,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(bytes)))
}

fn write_dataset(path: &Path, trips: &[MicroTrip]) -> Result<String, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_trips_jsonl(path, trips)?;
    file_sha256(path)
}

fn read_dataset(path: &Path) -> Result<Vec<MicroTrip>, CliError> {
    read_trips_jsonl(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn count_positive(trips: &[MicroTrip]) -> usize {
    trips.iter().filter(|t| t.label == 1).count()
}

#[derive(Serialize)]
struct GenerateSummary<'a> {
    config_hash: &'a str,
    seeds: Seeds,
    generator: &'a svtn_core::emissions::SynthSpec,
    n_samples: usize,
    n_positive: usize,
    dataset_sha256: String,
}

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    let trips = synth_generate(&ctx.config.generator)?;
    let sha = write_dataset(&ctx.out.join(DATASET_FILE), &trips)?;
    let summary = GenerateSummary {
        config_hash: &ctx.config_hash,
        seeds: ctx.seeds,
        generator: &ctx.config.generator,
        n_samples: trips.len(),
        n_positive: count_positive(&trips),
        dataset_sha256: sha,
    };
    write_json(&ctx.out.join("generate.json"), &summary)?;
    ctx.say(format!(
        "generated {} micro-trips ({} positive) into {}",
        summary.n_samples,
        summary.n_positive,
        ctx.out.display()
    ));
    Ok(())
}

#[derive(Serialize)]
struct MalformedEntry {
    line: u64,
    reason: String,
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    config_hash: &'a str,
    seeds: Seeds,
    source_sha256: String,
    window: usize,
    stride: usize,
    n_records: usize,
    malformed_rows: Vec<MalformedEntry>,
    invalid_records: usize,
    uncovered_records: usize,
    short_runs: usize,
    n_trips: usize,
    n_positive: usize,
    dataset_sha256: String,
}

pub fn ingest(ctx: &Context, csv: &Path, w: usize, stride: usize) -> Result<(), CliError> {
    let load = load_csv(csv).map_err(|e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", csv.display())),
        other => other,
    })?;
    let out = window(&load.records, w, stride)?;
    let sha = write_dataset(&ctx.out.join(DATASET_FILE), &out.trips)?;
    let summary = IngestSummary {
        config_hash: &ctx.config_hash,
        seeds: ctx.seeds,
        source_sha256: file_sha256(csv)?,
        window: w,
        stride,
        n_records: load.records.len(),
        malformed_rows: load
            .malformed
            .iter()
            .map(|m| MalformedEntry {
                line: m.line,
                reason: m.reason.clone(),
            })
            .collect(),
        invalid_records: out.invalid_records,
        uncovered_records: out.uncovered_records,
        short_runs: out.short_runs,
        n_trips: out.trips.len(),
        n_positive: count_positive(&out.trips),
        dataset_sha256: sha,
    };
    write_json(&ctx.out.join("ingest.json"), &summary)?;
    ctx.say(format!(
        "{} records -> {} micro-trips ({} positive); dropped: {} malformed rows, {} invalid-power records, {} records outside windows",
        summary.n_records,
        summary.n_trips,
        summary.n_positive,
        summary.malformed_rows.len(),
        summary.invalid_records,
        summary.uncovered_records
    ));
    Ok(())
}

#[derive(Serialize, serde::Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seeds: Seeds,
    pub config: RunConfig,
}

#[derive(Serialize, serde::Deserialize)]
pub struct FitSummary {
    pub config_hash: String,
    pub seeds: Seeds,
    pub dataset_sha256: String,
    pub n_train: usize,
    pub n_train_positive: usize,
    pub n_test: usize,
    pub n_test_positive: usize,
    pub encoder_loss: Vec<f64>,
    pub ridge: Option<f64>,
    pub fit_report: Option<FitReport>,
}

pub fn fit(ctx: &Context, data: Option<&Path>) -> Result<(), CliError> {
    let source = data.map(Path::to_path_buf).or_else(|| ctx.config.dataset.clone());
    let (trips, dataset_sha256) = match &source {
        Some(p) => (read_dataset(p)?, file_sha256(p)?),
        None => {
            let trips = synth_generate(&ctx.config.generator)?;
            let bytes: Vec<u8> = trips
                .iter()
                .flat_map(|t| {
                    let mut line = serde_json::to_vec(t).expect("trip serializes");
                    line.push(b'\n');
                    line
                })
                .collect();
            (trips, hex(&Sha256::digest(bytes)))
        }
    };
    let (train, test) = stratified_split(&trips, &ctx.config.split)?;
    ctx.say(format!(
        "fitting {} on {} trips, {} positive",
        VariantSpec { variant: ctx.config.pipeline.variant, k: ctx.config.pipeline.k },
        train.len(),
        count_positive(&train)
    ));
    let fitted = fit_pipeline(&train, &ctx.config.pipeline)?;

    save_pipeline(&ctx.out, &fitted)?;
    write_dataset(&ctx.out.join(TRAIN_FILE), &train)?;
    write_dataset(&ctx.out.join(TEST_FILE), &test)?;
    write_json(
        &ctx.out.join(RUN_FILE),
        &RunRecord {
            config_hash: ctx.config_hash.clone(),
            seeds: ctx.seeds,
            config: ctx.config.clone(),
        },
    )?;
    if let Some(report) = &fitted.report {
        write_json(&ctx.out.join(TRACE_FILE), &report.trace)?;
    }
    let summary = FitSummary {
        config_hash: ctx.config_hash.clone(),
        seeds: ctx.seeds,
        dataset_sha256,
        n_train: train.len(),
        n_train_positive: count_positive(&train),
        n_test: test.len(),
        n_test_positive: count_positive(&test),
        encoder_loss: fitted.encoder_loss.clone(),
        ridge: fitted.glm.as_ref().map(|g| g.ridge),
        fit_report: fitted.report.clone(),
    };
    write_json(&ctx.out.join(REPORT_FILE), &summary)?;
    if let Some(r) = &fitted.report {
        ctx.say(format!(
            "EM: {} iterations, converged = {}, final log-likelihood {:.6}",
            r.iterations,
            r.converged,
            r.loglik_trace.last().copied().unwrap_or(f64::NAN)
        ));
    }
    ctx.say(format!("fitted pipeline written to {}", ctx.out.display()));
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    config_hash: String,
    seeds: Seeds,
    dataset_sha256: String,
    n: usize,
    n_positive: usize,
    p_star: f64,
    metrics: ClassMetrics,
}

pub fn eval(ctx: &Context, fitted_dir: &Path, data: Option<&Path>) -> Result<(), CliError> {
    let run: RunRecord = read_json(&fitted_dir.join(RUN_FILE))?;
    let fitted = load_pipeline(fitted_dir)?;
    let data_path = data.map_or_else(|| fitted_dir.join(TEST_FILE), Path::to_path_buf);
    let trips = read_dataset(&data_path)?;
    let pred = predict_pipeline(&fitted, &trips)?;
    let truth: Vec<u8> = trips.iter().map(|t| t.label).collect();
    let metrics = ClassMetrics::from_labels(&truth, &pred.labels)?;
    let summary = EvalSummary {
        config_hash: run.config_hash,
        seeds: run.seeds,
        dataset_sha256: file_sha256(&data_path)?,
        n: trips.len(),
        n_positive: count_positive(&trips),
        p_star: fitted.config.p_star,
        metrics,
    };
    write_json(&ctx.out.join(METRICS_FILE), &summary)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    ctx.say(format!(
        "recall {} precision {} f1 {} | tp {} fp {} fn {} tn {}",
        fmt(metrics.recall),
        fmt(metrics.precision),
        fmt(metrics.f1),
        metrics.confusion.n_tp,
        metrics.confusion.n_fp,
        metrics.confusion.n_fn,
        metrics.confusion.n_tn
    ));
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    config_hash: &'a str,
    seeds: Seeds,
    spec: &'a SweepSpec,
    table: &'a SweepTable,
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let spec = SweepSpec {
        generator: c.generator.clone(),
        ratios: c.sweep.ratios.clone(),
        variants: c.sweep.variants.clone(),
        trials: c.sweep.trials,
        seed: ctx.seeds.root,
        split: c.split,
        pipeline: c.pipeline.clone(),
    };
    ctx.say(format!(
        "sweeping {} ratios x {} variants x {} trials",
        spec.ratios.len(),
        spec.variants.len(),
        spec.trials
    ));
    let table = ratio_sweep(&spec)?;
    fs::create_dir_all(&ctx.out)?;
    fs::write(ctx.out.join("sweep.csv"), sweep_to_csv(&table))?;
    write_json(
        &ctx.out.join("sweep.json"),
        &SweepSummary {
            config_hash: &ctx.config_hash,
            seeds: ctx.seeds,
            spec: &spec,
            table: &table,
        },
    )?;
    for r in &table.ratios {
        for f in &r.summary.failures {
            ctx.say(format!("ratio {}: trial {} failed: {}", r.ratio, f.trial, f.error));
        }
    }
    for row in &table.rows {
        ctx.say(format!(
            "ratio {:>5} {:<18} {:<7} {} ± {} (n = {})",
            row.ratio,
            row.variant,
            row.metric,
            row.mean.map_or("undefined".into(), |m| format!("{m:.4}")),
            row.std.map_or("undefined".into(), |m| format!("{m:.4}")),
            row.n_trials
        ));
    }
    Ok(())
}

#[derive(Serialize)]
pub struct Diagnostics {
    pub config_hash: String,
    pub seeds: Seeds,
    pub iterations: usize,
    pub converged: bool,
    pub contraction_estimate: Option<f64>,
    pub lambda_min: f64,
    pub ridge: f64,
    pub clamp_events: usize,
    pub bound: Option<BoundCheck>,
    pub bound_error: Option<String>,
    pub consistency: Option<Vec<ConsistencyRow>>,
}

pub fn diagnose(ctx: &Context, fitted_dir: &Path, consistency: bool) -> Result<(), CliError> {
    let run: RunRecord = read_json(&fitted_dir.join(RUN_FILE))?;
    let summary: FitSummary = read_json(&fitted_dir.join(REPORT_FILE))?;
    let mut report = summary.fit_report.ok_or_else(|| {
        CliError::Data(format!(
            "{} holds no EM fit (variant without a set-valued stage)",
            fitted_dir.display()
        ))
    })?;
    report.trace = read_json::<EmTrace>(&fitted_dir.join(TRACE_FILE))?;
    let trace = &report.trace;
    let rho = contraction_estimate(&trace.theta_trace);
    let (bound, bound_error) = match rho {
        Some(rho) if trace.theta_trace.len() >= 2 => {
            let a = trace.gram_matrix();
            match convergence_bound(&report, &a, &trace.theta_trace[0], &trace.theta_trace[1], rho) {
                Ok(b) => (Some(check_bound(&trace.theta_trace, &b)), None),
                Err(e) => (None, Some(e.to_string())),
            }
        }
        _ => (None, Some("too few iterates for a contraction estimate".into())),
    };
    let consistency = if consistency || run.config.diagnose.consistency {
        ctx.say("running consistency experiment");
        Some(consistency_experiment(&run.config.diagnose.experiment)?)
    } else {
        None
    };
    let diag = Diagnostics {
        config_hash: run.config_hash,
        seeds: run.seeds,
        iterations: report.iterations,
        converged: report.converged,
        contraction_estimate: rho,
        lambda_min: trace.lambda_min,
        ridge: trace.ridge,
        clamp_events: trace.clamp_events,
        bound,
        bound_error,
        consistency,
    };
    write_json(&ctx.out.join(DIAGNOSTICS_FILE), &diag)?;
    match (&diag.bound, &diag.bound_error) {
        (Some(b), _) => ctx.say(format!(
            "contraction {:.4}; bound dominates measured error: {} (worst ratio {:.3e})",
            rho.unwrap_or(f64::NAN),
            b.dominated,
            b.worst_ratio
        )),
        (None, Some(e)) => ctx.say(format!("no convergence bound: {e}")),
        _ => {}
    }
    if let Some(rows) = &diag.consistency {
        for r in rows {
            ctx.say(format!(
                "N = {:>6}: mean error {:.4}, covariance rel. error {:.3}",
                r.n, r.mean_error, r.rel_frobenius_error
            ));
        }
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::seed::derive_seed;

/// Summary of one metric across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for a single value.
    pub std: f64,
    /// Per-trial values in trial order.
    pub values: Vec<f64>,
    pub n_trials: usize,
    /// Completed trials in which the metric was undefined.
    pub n_undefined: usize,
}

/// Mean and sample standard deviation. Aggregation sorts the values first,
/// so the result does not depend on the order trials finished in.
pub fn summarize(metric: &str, values: &[f64]) -> Result<TrialStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = (sorted.iter().sum::<f64>() / n).clamp(sorted[0], sorted[sorted.len() - 1]);
    let std = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TrialStats {
        metric: metric.to_string(),
        mean,
        std,
        values: values.to_vec(),
        n_trials: values.len(),
        n_undefined: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub root_seed: u64,
    pub seeds: Vec<u64>,
    pub n_completed: usize,
    pub failures: Vec<TrialFailure>,
    /// Keyed by metric name. A metric that was undefined in every completed
    /// trial is absent.
    pub stats: BTreeMap<String, TrialStats>,
}

/// Runs `experiment` once per trial with seed `derive_seed(root_seed, i)`.
///
/// The experiment returns named metrics, `None` meaning undefined. Failed
/// trials are recorded; statistics cover completed trials only. Trials run
/// in parallel when the `parallel` feature is enabled.
pub fn repeated_trials<F, E>(
    n_trials: usize,
    root_seed: u64,
    experiment: F,
) -> Result<TrialSummary, MetricsError>
where
    F: Fn(u64) -> Result<BTreeMap<String, Option<f64>>, E> + Sync,
    E: Display + Send,
{
    if n_trials == 0 {
        return Err(MetricsError::NoTrials);
    }
    let seeds: Vec<u64> = (0..n_trials as u64).map(|i| derive_seed(root_seed, i)).collect();

    #[cfg(feature = "parallel")]
    let outcomes: Vec<_> = {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| experiment(s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<_> = seeds.iter().map(|&s| experiment(s)).collect();

    aggregate(root_seed, seeds, outcomes)
}

fn aggregate<E: Display>(
    root_seed: u64,
    seeds: Vec<u64>,
    outcomes: Vec<Result<BTreeMap<String, Option<f64>>, E>>,
) -> Result<TrialSummary, MetricsError> {
    let mut failures = Vec::new();
    let mut values: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    let mut n_completed = 0;
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(metrics) => {
                n_completed += 1;
                for (name, v) in metrics {
                    let entry = values.entry(name).or_default();
                    match v {
                        Some(v) => entry.0.push(v),
                        None => entry.1 += 1,
                    }
                }
            }
            Err(e) => failures.push(TrialFailure {
                trial,
                seed: seeds[trial],
                error: e.to_string(),
            }),
        }
    }
    if n_completed == 0 {
        return Err(MetricsError::AllTrialsFailed(failures[0].error.clone()));
    }
    let mut stats = BTreeMap::new();
    for (name, (vals, undefined)) in values {
        if vals.is_empty() {
            continue;
        }
        let mut s = summarize(&name, &vals)?;
        s.n_undefined = undefined;
        stats.insert(name, s);
    }
    Ok(TrialSummary {
        root_seed,
        seeds,
        n_completed,
        failures,
        stats,
    })
}

//! Per-sample inference latency grouped by gold depth.

use std::collections::BTreeMap;
use std::time::Instant;

use ibr_core::metrics::LatencyRow;
use ibr_core::Sample;
use serde::{Deserialize, Serialize};

use crate::config::InferConfig;
use crate::error::Result;
use crate::infer::generate_proof;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
    pub repetitions: usize,
    /// Least-squares slope of seconds per sample against depth.
    pub slope: f64,
    pub intercept: f64,
    pub depth0_mean: Option<f64>,
}

impl LatencyReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>6} {:>7} {:>12} {:>12}\n", "depth", "count", "mean ms", "stddev ms");
        for r in &self.rows {
            out += &format!(
                "{:>6} {:>7} {:>12.3} {:>12.3}\n",
                r.depth,
                r.count,
                1e3 * r.mean_seconds,
                1e3 * r.stddev_seconds
            );
        }
        out += &format!("slope {:.3} ms/depth, intercept {:.3} ms", 1e3 * self.slope, 1e3 * self.intercept);
        if let Some(d0) = self.depth0_mean {
            out += &format!(", slope/depth-0 mean {:.3}", self.slope / d0);
        }
        out
    }
}

/// Ordinary least squares `y = slope * x + intercept`; slope 0 when `x` is constant.
pub fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Times encoding plus decoding of every sample `repetitions` times after a
/// warm-up pass. The beam size is forced to 1.
pub fn latency_bench(model: &Model, samples: &[Sample], config: &InferConfig, repetitions: usize) -> Result<LatencyReport> {
    let config = InferConfig { beam_size: 1, ..config.clone() };
    let repetitions = repetitions.max(1);
    for s in samples.iter().take(10) {
        generate_proof(model, s, &config)?;
    }
    // depth -> per-repetition total seconds
    let mut totals: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut per_sample = vec![0.0; samples.len()];
    for rep in 0..repetitions {
        for (i, s) in samples.iter().enumerate() {
            let start = Instant::now();
            generate_proof(model, s, &config)?;
            let t = start.elapsed().as_secs_f64();
            totals.entry(s.depth).or_insert_with(|| vec![0.0; repetitions])[rep] += t;
            per_sample[i] += t / repetitions as f64;
        }
    }
    for s in samples {
        *counts.entry(s.depth).or_default() += 1;
    }
    let rows: Vec<LatencyRow> = totals
        .iter()
        .map(|(&depth, reps)| {
            let n = counts[&depth] as f64;
            let means: Vec<f64> = reps.iter().map(|t| t / n).collect();
            let mean = means.iter().sum::<f64>() / means.len() as f64;
            let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / means.len() as f64;
            LatencyRow { depth, count: counts[&depth], mean_seconds: mean, stddev_seconds: var.sqrt() }
        })
        .collect();
    let points: Vec<(f64, f64)> = samples.iter().zip(&per_sample).map(|(s, t)| (s.depth as f64, *t)).collect();
    let (slope, intercept) = fit_line(&points);
    let depth0_mean = rows.iter().find(|r| r.depth == 0).map(|r| r.mean_seconds);
    Ok(LatencyReport { rows, repetitions, slope, intercept, depth0_mean })
}

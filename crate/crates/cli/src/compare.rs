use std::io::Write;

use serde::Serialize;

use moesim_core::engine::Mode;

use crate::error::{invalid, CliError};
use crate::run::{PointStats, Summary};

pub const COMPARISON_CSV_HEADER: &str = "key,mode,budget_fraction,invocation_period,arrival_rate,baseline_key,\
latency_mean_ratio,latency_p50_ratio,latency_p90_ratio,memory_ratio,expert_memory_ratio,throughput_ratio,hit_rate";

/// One sweep point measured against the baseline at the same arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub key: String,
    pub mode: Mode,
    pub budget_fraction: f64,
    pub invocation_period: usize,
    pub arrival_rate: f64,
    pub baseline_key: String,
    pub latency_mean_ratio: f64,
    pub latency_p50_ratio: f64,
    pub latency_p90_ratio: f64,
    /// Peak device memory, all weights included.
    pub memory_ratio: f64,
    /// Expert bytes resident at the end of the run.
    pub expert_memory_ratio: f64,
    pub throughput_ratio: f64,
    pub hit_rate: f64,
}

/// Ratios of every successful point against the first successful baseline
/// row with the same arrival rate. Failed points are skipped.
pub fn compare_modes(summary: &Summary) -> Result<Vec<Comparison>, CliError> {
    let mut out = Vec::new();
    for (i, row) in summary.points.iter().enumerate() {
        let Some(stats) = &row.stats else { continue };
        let baseline = summary.points.iter().find_map(|b| match &b.stats {
            Some(bs) if b.point.mode == Mode::Baseline && b.point.arrival_rate == row.point.arrival_rate => {
                Some((b, bs))
            }
            _ => None,
        });
        let Some((b, bs)) = baseline else {
            return Err(invalid(
                format!("points[{i}]"),
                format!("no successful baseline row at arrival_rate {}", row.point.arrival_rate),
            ));
        };
        out.push(ratios(row.key.clone(), &row.point, b.key.clone(), stats, bs));
    }
    Ok(out)
}

fn ratios(key: String, p: &crate::run::SweepPoint, baseline_key: String, s: &PointStats, b: &PointStats) -> Comparison {
    Comparison {
        key,
        mode: p.mode,
        budget_fraction: p.budget_fraction,
        invocation_period: p.invocation_period,
        arrival_rate: p.arrival_rate,
        baseline_key,
        latency_mean_ratio: s.latency_mean / b.latency_mean,
        latency_p50_ratio: s.latency_p50 / b.latency_p50,
        latency_p90_ratio: s.latency_p90 / b.latency_p90,
        memory_ratio: s.peak_memory as f64 / b.peak_memory as f64,
        expert_memory_ratio: s.expert_memory as f64 / b.expert_memory as f64,
        throughput_ratio: s.throughput / b.throughput,
        hit_rate: s.hit_rate,
    }
}

pub fn write_comparison_csv<W: Write>(mut out: W, rows: &[Comparison]) -> std::io::Result<()> {
    writeln!(out, "{COMPARISON_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.key,
            r.mode,
            r.budget_fraction,
            r.invocation_period,
            r.arrival_rate,
            r.baseline_key,
            r.latency_mean_ratio,
            r.latency_p50_ratio,
            r.latency_p90_ratio,
            r.memory_ratio,
            r.expert_memory_ratio,
            r.throughput_ratio,
            r.hit_rate
        )?;
    }
    Ok(())
}

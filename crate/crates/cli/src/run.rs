use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use moesim_core::engine::{run, synthetic_scenario, write_events_csv, EngineConfig, Mode, Scenario};
use moesim_core::expert_store::{budgets_from_fraction, write_snapshots};
use moesim_core::workload::trace_io::read_trace;
use moesim_core::workload::ModelShape;

use crate::config::{ScenarioConfig, SCHEMA_VERSION};
use crate::error::{invalid, CliError};

pub const SUMMARY_FILE: &str = "summary.json";

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Restrict the sweep to these modes.
    pub modes: Vec<Mode>,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mode: Mode,
    pub budget_fraction: f64,
    pub invocation_period: usize,
    pub arrival_rate: f64,
}

impl SweepPoint {
    /// File-name-safe identifier, e.g. `emoe_a_phi0.6_p40_rate2`.
    pub fn key(&self) -> String {
        format!(
            "{}_phi{}_p{}_rate{}",
            self.mode, self.budget_fraction, self.invocation_period, self.arrival_rate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Failed,
}

/// Per-point results. Latencies in seconds, memory in bytes, throughput in
/// generated tokens per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub requests: usize,
    pub completed: usize,
    pub dropped: usize,
    pub slo_violations: usize,
    pub latency_mean: f64,
    pub latency_p50: f64,
    pub latency_p90: f64,
    pub ttft_p50: f64,
    pub ttft_p90: f64,
    pub hit_rate: f64,
    pub peak_memory: u64,
    pub final_memory: u64,
    /// Device bytes held by experts at the end of the run.
    pub expert_memory: u64,
    pub throughput: f64,
    pub makespan: f64,
    pub predictor_invocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub key: String,
    #[serde(flatten)]
    pub point: SweepPoint,
    pub status: PointStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<PointStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub seed: u64,
    pub points: Vec<SummaryRow>,
}

impl Summary {
    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| p.status == PointStatus::Failed).count()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let f = File::open(path).map_err(|e| CliError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| invalid(path.display().to_string(), e))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::Io {
            path: path.to_owned(),
            source: e,
        })
    }
}

/// Cartesian product in axis order: mode, budget, period, rate.
pub fn sweep_points(cfg: &ScenarioConfig) -> Vec<SweepPoint> {
    let s = &cfg.sweep;
    let mut out = Vec::new();
    for &mode in &s.modes {
        for &budget_fraction in &s.budget_fractions {
            for &invocation_period in &s.invocation_periods {
                for &arrival_rate in &s.arrival_rates {
                    out.push(SweepPoint {
                        mode,
                        budget_fraction,
                        invocation_period,
                        arrival_rate,
                    });
                }
            }
        }
    }
    out
}

/// Runs every sweep point and writes `<key>.metrics.csv` per point plus
/// `summary.json` into `out_dir`.
///
/// A failing point is recorded as such in the summary; its siblings still run.
/// Errors are returned only for problems that affect the whole sweep.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path, opts: &RunOptions) -> Result<Summary, CliError> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if !opts.modes.is_empty() {
        if let Some(m) = opts.modes.iter().find(|m| !cfg.sweep.modes.contains(m)) {
            return Err(invalid("sweep.modes", format!("--mode {m} is not part of the sweep")));
        }
        cfg.sweep.modes.retain(|m| opts.modes.contains(m));
    }
    cfg.validate()?;

    let shape = cfg.model.shape()?;
    let profiles = cfg.profiles(&shape)?;
    let cost = cfg.cost.cost(&shape)?;
    let calibration = cfg.calibration.calibration(&shape, cfg.seed)?;
    let eval_trace = match &cfg.workload.trace_path {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Io {
                path: p.clone(),
                source: e,
            })?;
            let (trace, _) = read_trace(BufReader::new(f), shape.experts_per_layer)?;
            Some(trace)
        }
        None => None,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io {
        path: out_dir.to_owned(),
        source: e,
    })?;

    let template = EngineConfig {
        seed: cfg.seed,
        task_aware: cfg.engine.task_aware,
        frequency_prior_weight: cfg.engine.frequency_prior_weight,
        ..EngineConfig::new(
            Mode::Baseline,
            vec![shape.experts_per_layer; shape.num_moe_layers],
            cfg.engine.token_budget,
        )
    };
    let bases: Vec<Result<Scenario, CliError>> = cfg
        .sweep
        .arrival_rates
        .par_iter()
        .map(|&rate| {
            let spec = cfg.workload_spec(&profiles, rate);
            let mut sc = synthetic_scenario(
                &shape,
                &profiles,
                &calibration,
                &spec,
                template.clone(),
                cost.clone(),
                cfg.seed,
            )?;
            if let Some(t) = &eval_trace {
                sc.trace = t.clone();
                sc.validate()?;
            }
            Ok(sc)
        })
        .collect();
    if let Some(Err(CliError::Validation(m))) = bases.iter().find(|b| matches!(b, Err(CliError::Validation(_)))) {
        return Err(CliError::Validation(m.clone()));
    }

    let points = sweep_points(&cfg);
    let rows: Vec<SummaryRow> = points
        .into_par_iter()
        .map(|point| {
            let key = point.key();
            let rate_idx = cfg
                .sweep
                .arrival_rates
                .iter()
                .position(|&r| r == point.arrival_rate)
                .expect("rate from sweep");
            let outcome = match &bases[rate_idx] {
                Ok(base) => run_point(base, &shape, &point, &key, out_dir, &cfg),
                Err(e) => Err(CliError::Runtime(e.to_string())),
            };
            match outcome {
                Ok((file, stats)) => {
                    if !opts.quiet {
                        eprintln!("{key}: ok");
                    }
                    SummaryRow {
                        key,
                        point,
                        status: PointStatus::Ok,
                        error: None,
                        metrics_file: Some(file),
                        stats: Some(stats),
                    }
                }
                Err(e) => {
                    eprintln!("{key}: failed: {e}");
                    SummaryRow {
                        key,
                        point,
                        status: PointStatus::Failed,
                        error: Some(e.to_string()),
                        metrics_file: None,
                        stats: None,
                    }
                }
            }
        })
        .collect();

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        points: rows,
    };
    summary.write(&out_dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

fn run_point(
    base: &Scenario,
    shape: &ModelShape,
    point: &SweepPoint,
    key: &str,
    out_dir: &Path,
    cfg: &ScenarioConfig,
) -> Result<(String, PointStats), CliError> {
    let mut sc = base.clone();
    sc.config.mode = point.mode;
    sc.config.invocation_period = point.invocation_period;
    sc.config.budgets = budgets_from_fraction(shape, point.budget_fraction)?;
    let out = run(&sc)?;
    let m = &out.metrics;

    let file = format!("{key}.metrics.csv");
    write_file(&out_dir.join(&file), |w| Ok(m.write_requests_csv(w)?))?;
    if cfg.output.events {
        write_file(&out_dir.join(format!("{key}.events.csv")), |w| {
            Ok(write_events_csv(w, &out.events)?)
        })?;
    }
    if cfg.output.memory {
        write_file(&out_dir.join(format!("{key}.memory.csv")), |w| {
            Ok(m.write_memory_csv(w)?)
        })?;
    }
    if cfg.output.placements {
        write_file(&out_dir.join(format!("{key}.placements.ndjson")), |w| {
            Ok(write_snapshots(w, &out.snapshots)?)
        })?;
    }

    let s = &m.summary;
    let stats = PointStats {
        requests: s.requests,
        completed: s.completed,
        dropped: s.dropped,
        slo_violations: s.slo_violations,
        latency_mean: s.latency_mean,
        latency_p50: s.latency_p50,
        latency_p90: s.latency_p90,
        ttft_p50: s.ttft_p50,
        ttft_p90: s.ttft_p90,
        hit_rate: s.hit_rate,
        peak_memory: s.peak_memory,
        final_memory: s.final_memory,
        expert_memory: s.final_memory.saturating_sub(shape.base_bytes),
        throughput: s.throughput,
        makespan: s.makespan,
        predictor_invocations: s.predictor_invocations,
    };
    Ok((file, stats))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>) -> Result<(), CliError> {
    let io = |e| CliError::Io {
        path: path.to_owned(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    body(&mut w)?;
    w.flush().map_err(io)
}

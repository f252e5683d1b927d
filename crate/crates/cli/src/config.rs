//! Scenario file schema.
//!
//! A scenario is a TOML document. Every table rejects unknown keys so that a
//! typo surfaces as a validation error naming the key.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use moesim_core::engine::{CostModel, Mode, WorkloadSpec, DEFAULT_FREQUENCY_PRIOR_WEIGHT, DEFAULT_INVOCATION_PERIOD};
use moesim_core::predictor::DEFAULT_SMOOTHING;
use moesim_core::workload::{calibrate, ModelShape, TaskProfile, TraceCalibration};

use crate::error::{invalid, CliError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    #[serde(default)]
    pub tasks: TasksSection,
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub cost: CostSection,
    pub engine: EngineSection,
    pub workload: WorkloadSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Openmoe,
    Mixtral,
}

/// Model geometry: a preset, explicit fields, or a preset with overrides.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<Preset>,
    pub num_moe_layers: Option<usize>,
    pub experts_per_layer: Option<usize>,
    pub top_k: Option<usize>,
    pub expert_bytes: Option<u64>,
    pub base_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksSection {
    /// Include the five built-in task profiles.
    #[serde(default = "yes")]
    pub defaults: bool,
    /// Accuracy threshold used to derive the built-in sensitivity vectors.
    #[serde(default = "default_threshold")]
    pub sensitivity_threshold: f64,
    /// Extra profiles, appended after the built-in ones.
    #[serde(default)]
    pub profiles: Vec<TaskProfile>,
}

impl Default for TasksSection {
    fn default() -> Self {
        Self {
            defaults: true,
            sensitivity_threshold: default_threshold(),
            profiles: Vec::new(),
        }
    }
}

/// Routing-trace correlations, given either as raw stickiness of the
/// identity/uniform mixtures or as measured-correlation targets.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub layer_stickiness: Option<f64>,
    pub prompt_stickiness: Option<f64>,
    pub target_layer_corr: Option<f64>,
    pub target_prompt_corr: Option<f64>,
}

/// Cost constants: a preset with optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub preset: Option<Preset>,
    pub full_transfer_secs: Option<f64>,
    pub per_token_cost: Option<f64>,
    pub per_expert_transfer: Option<f64>,
    pub hd_bandwidth: Option<f64>,
    pub predictor_invocation_cost: Option<f64>,
    pub predictor_cost_layerwise: Option<f64>,
    pub contention_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub token_budget: usize,
    #[serde(default = "yes")]
    pub task_aware: bool,
    #[serde(default = "default_prior_weight")]
    pub frequency_prior_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub duration: f64,
    pub max_requests: Option<usize>,
    /// Relative weight per task id, normalized to sum to 1; unlisted tasks
    /// get weight 0.
    pub task_mix: BTreeMap<String, f64>,
    pub trace_prompts: usize,
    pub tokens_per_prompt: usize,
    pub training_prompts: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// Replace the generated evaluation trace with an NDJSON trace file,
    /// resolved relative to the scenario file.
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub modes: Vec<Mode>,
    pub budget_fractions: Vec<f64>,
    #[serde(default = "default_periods")]
    pub invocation_periods: Vec<usize>,
    pub arrival_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Also write `<key>.events.csv` per sweep point.
    #[serde(default)]
    pub events: bool,
    /// Also write `<key>.memory.csv` per sweep point.
    #[serde(default)]
    pub memory: bool,
    /// Also write `<key>.placements.ndjson`: every layer's resident set after each applied plan.
    #[serde(default)]
    pub placements: bool,
}

fn yes() -> bool {
    true
}

fn default_threshold() -> f64 {
    0.85
}

fn default_prior_weight() -> f64 {
    DEFAULT_FREQUENCY_PRIOR_WEIGHT
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

fn default_periods() -> Vec<usize> {
    vec![DEFAULT_INVOCATION_PERIOD]
}

/// Reads and validates a scenario file.
pub fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let mut cfg = parse(&text)?;
    if let Some(p) = &cfg.workload.trace_path {
        if p.is_relative() {
            let dir = path.parent().unwrap_or(Path::new("."));
            cfg.workload.trace_path = Some(dir.join(p));
        }
    }
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string().trim_end().to_owned()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ModelSection {
    pub fn shape(&self) -> Result<ModelShape, CliError> {
        let base = self.preset.map(|p| match p {
            Preset::Openmoe => ModelShape::openmoe(),
            Preset::Mixtral => ModelShape::mixtral_8x7b(),
        });
        let pick = |v: Option<u64>, from: Option<u64>, key: &str| {
            v.or(from)
                .ok_or_else(|| invalid(format!("model.{key}"), "required when no preset is given"))
        };
        let b = base.as_ref();
        let shape = ModelShape {
            num_moe_layers: pick(
                self.num_moe_layers.map(|v| v as u64),
                b.map(|s| s.num_moe_layers as u64),
                "num_moe_layers",
            )? as usize,
            experts_per_layer: pick(
                self.experts_per_layer.map(|v| v as u64),
                b.map(|s| s.experts_per_layer as u64),
                "experts_per_layer",
            )? as usize,
            top_k: pick(self.top_k.map(|v| v as u64), b.map(|s| s.top_k as u64), "top_k")? as usize,
            expert_bytes: pick(self.expert_bytes, b.map(|s| s.expert_bytes), "expert_bytes")?,
            base_bytes: pick(self.base_bytes, b.map(|s| s.base_bytes), "base_bytes")?,
        };
        shape.validate().map_err(|e| prefixed("model", e))?;
        Ok(shape)
    }
}

impl CostSection {
    pub fn cost(&self, shape: &ModelShape) -> Result<CostModel, CliError> {
        let mut c = match self.preset.unwrap_or(Preset::Openmoe) {
            Preset::Openmoe => CostModel::openmoe(shape),
            Preset::Mixtral => CostModel::mixtral(shape),
        }
        .map_err(CliError::from)?;
        if let Some(full) = self.full_transfer_secs {
            let re = CostModel::calibrated(
                shape,
                full,
                c.per_expert_transfer,
                c.per_token_cost,
                c.predictor_invocation_cost,
                c.contention_factor,
            )
            .map_err(|e| match e {
                moesim_core::Error::Validation { reason, .. } => invalid("cost.full_transfer_secs", reason),
                other => other.into(),
            })?;
            c.hd_bandwidth = re.hd_bandwidth;
        }
        let overrides = [
            (self.per_token_cost, &mut c.per_token_cost),
            (self.per_expert_transfer, &mut c.per_expert_transfer),
            (self.hd_bandwidth, &mut c.hd_bandwidth),
            (self.predictor_invocation_cost, &mut c.predictor_invocation_cost),
            (self.contention_factor, &mut c.contention_factor),
        ];
        for (v, slot) in overrides {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if self.predictor_cost_layerwise.is_some() {
            c.predictor_cost_layerwise = self.predictor_cost_layerwise;
        }
        c.validate()?;
        Ok(c)
    }
}

impl CalibrationSection {
    /// Validates the form without running the (costly) correlation search.
    pub fn check(&self) -> Result<(), CliError> {
        let fields = [
            ("calibration.layer_stickiness", self.layer_stickiness),
            ("calibration.prompt_stickiness", self.prompt_stickiness),
            ("calibration.target_layer_corr", self.target_layer_corr),
            ("calibration.target_prompt_corr", self.target_prompt_corr),
        ];
        for (key, v) in fields {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(invalid(key, "must lie in [0, 1]"));
                }
            }
        }
        let sticky = self.layer_stickiness.is_some() && self.prompt_stickiness.is_some();
        let targets = self.target_layer_corr.is_some() && self.target_prompt_corr.is_some();
        let any_sticky = self.layer_stickiness.is_some() || self.prompt_stickiness.is_some();
        let any_target = self.target_layer_corr.is_some() || self.target_prompt_corr.is_some();
        if (sticky && !any_target) || (targets && !any_sticky) {
            Ok(())
        } else {
            Err(invalid(
                "calibration",
                "give either layer_stickiness and prompt_stickiness, or target_layer_corr and target_prompt_corr",
            ))
        }
    }

    pub fn calibration(&self, shape: &ModelShape, seed: u64) -> Result<TraceCalibration, CliError> {
        self.check()?;
        match (
            self.layer_stickiness,
            self.prompt_stickiness,
            self.target_layer_corr,
            self.target_prompt_corr,
        ) {
            (Some(l), Some(p), _, _) => Ok(TraceCalibration::from_stickiness(shape, l, p, seed)),
            (_, _, Some(l), Some(p)) => calibrate(shape, l, p, seed).map_err(|e| prefixed("calibration", e)),
            _ => unreachable!("checked above"),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        let shape = self.model.shape()?;
        let profiles = self.profiles(&shape)?;
        self.cost.cost(&shape)?;
        self.calibration.check()?;
        if self.engine.token_budget == 0 {
            return Err(invalid("engine.token_budget", "must be positive"));
        }
        let w = &self.engine.frequency_prior_weight;
        if !(0.0..=1.0).contains(w) {
            return Err(invalid("engine.frequency_prior_weight", "must lie in [0, 1]"));
        }

        let ids: BTreeSet<&str> = profiles.iter().map(|p| p.task_id.as_str()).collect();
        for (task, weight) in &self.workload.task_mix {
            if !ids.contains(task.as_str()) {
                return Err(invalid(
                    format!("workload.task_mix.{task}"),
                    "references a task with no profile",
                ));
            }
            if !(*weight >= 0.0 && weight.is_finite()) {
                return Err(invalid(format!("workload.task_mix.{task}"), "must be non-negative"));
            }
        }
        if !self.workload.task_mix.values().any(|&w| w > 0.0) {
            return Err(invalid("workload.task_mix", "needs at least one positive weight"));
        }
        if !(self.workload.duration > 0.0 && self.workload.duration.is_finite()) {
            return Err(invalid("workload.duration", "must be positive"));
        }
        let spec = self.workload_spec(&profiles, 1.0);
        spec.validate(&profiles)?;

        let s = &self.sweep;
        let axes = [
            ("sweep.modes", s.modes.is_empty()),
            ("sweep.budget_fractions", s.budget_fractions.is_empty()),
            ("sweep.invocation_periods", s.invocation_periods.is_empty()),
            ("sweep.arrival_rates", s.arrival_rates.is_empty()),
        ];
        for (key, empty) in axes {
            if empty {
                return Err(invalid(key, "sweep axis is empty"));
            }
        }
        for (i, phi) in s.budget_fractions.iter().enumerate() {
            if !(*phi > 0.0 && *phi <= 1.0) {
                return Err(invalid(format!("sweep.budget_fractions[{i}]"), "must lie in (0, 1]"));
            }
        }
        for (i, p) in s.invocation_periods.iter().enumerate() {
            if *p == 0 {
                return Err(invalid(format!("sweep.invocation_periods[{i}]"), "must be positive"));
            }
        }
        for (i, r) in s.arrival_rates.iter().enumerate() {
            if !(*r > 0.0 && r.is_finite()) {
                return Err(invalid(format!("sweep.arrival_rates[{i}]"), "must be positive"));
            }
        }
        Ok(())
    }

    /// Task profiles in definition order: built-ins first, then custom ones.
    pub fn profiles(&self, shape: &ModelShape) -> Result<Vec<TaskProfile>, CliError> {
        let mut out = if self.tasks.defaults {
            let t = self.tasks.sensitivity_threshold;
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid("tasks.sensitivity_threshold", "must lie in [0, 1]"));
            }
            TaskProfile::defaults(shape, t)
        } else {
            Vec::new()
        };
        for (i, p) in self.tasks.profiles.iter().enumerate() {
            if out.iter().any(|q| q.task_id == p.task_id) {
                return Err(invalid(
                    format!("tasks.profiles[{i}].task_id"),
                    format!("{} defined twice", p.task_id),
                ));
            }
            p.validate(shape)
                .map_err(|e| prefixed(&format!("tasks.profiles[{i}]"), e))?;
            out.push(p.clone());
        }
        if out.is_empty() {
            return Err(invalid("tasks", "no task profiles defined"));
        }
        Ok(out)
    }

    pub fn workload_spec(&self, profiles: &[TaskProfile], arrival_rate: f64) -> WorkloadSpec {
        let w = &self.workload;
        let total: f64 = w.task_mix.values().sum();
        WorkloadSpec {
            arrival_rate,
            duration: w.duration,
            max_requests: w.max_requests,
            task_mix: profiles
                .iter()
                .map(|p| w.task_mix.get(p.task_id.as_str()).map_or(0.0, |v| v / total))
                .collect(),
            trace_prompts: w.trace_prompts,
            tokens_per_prompt: w.tokens_per_prompt,
            training_prompts: w.training_prompts,
            smoothing: w.smoothing,
        }
    }
}

fn prefixed(section: &str, e: moesim_core::Error) -> CliError {
    match e {
        moesim_core::Error::Validation { key, reason } if !key.starts_with(section) => {
            invalid(format!("{section}.{key}"), reason)
        }
        other => other.into(),
    }
}

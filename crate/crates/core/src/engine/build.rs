use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::{CostModel, EngineConfig, Scenario};
use crate::error::{invalid, Result};
use crate::predictor::{TransitionModel, DEFAULT_SMOOTHING};
use crate::workload::{gen_request_trace, gen_routing_trace, ModelShape, TaskId, TaskProfile, TraceCalibration};

/// Parameters of a generated workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Poisson arrival rate, requests per second.
    pub arrival_rate: f64,
    /// Arrivals are generated over `[0, duration)` seconds.
    pub duration: f64,
    /// Keep at most this many requests.
    #[serde(default)]
    pub max_requests: Option<usize>,
    /// One weight per task profile.
    pub task_mix: Vec<f64>,
    pub trace_prompts: usize,
    pub tokens_per_prompt: usize,
    /// Prompts in the trace the predictor is fitted on.
    pub training_prompts: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

impl WorkloadSpec {
    pub fn validate(&self, profiles: &[TaskProfile]) -> Result<()> {
        if self.task_mix.len() != profiles.len() {
            return Err(invalid("workload.task_mix", "one weight per task profile required"));
        }
        if self.trace_prompts == 0 || self.tokens_per_prompt == 0 || self.training_prompts == 0 {
            return Err(invalid(
                "workload",
                "trace_prompts, tokens_per_prompt and training_prompts must be positive",
            ));
        }
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return Err(invalid("workload.smoothing", "must be positive"));
        }
        Ok(())
    }
}

/// Generates requests, an evaluation trace and a fitted predictor.
///
/// The predictor is trained on a separate trace drawn with seed
/// `calibration.rng_seed + 1`; requests use `seed`.
pub fn synthetic_scenario(
    shape: &ModelShape,
    profiles: &[TaskProfile],
    calibration: &TraceCalibration,
    workload: &WorkloadSpec,
    config: EngineConfig,
    cost: CostModel,
    seed: u64,
) -> Result<Scenario> {
    workload.validate(profiles)?;
    let mut requests = gen_request_trace(
        profiles,
        workload.arrival_rate,
        workload.duration,
        &workload.task_mix,
        seed,
    )?;
    if let Some(n) = workload.max_requests {
        requests.truncate(n);
    }
    let trace = gen_routing_trace(shape, calibration, workload.trace_prompts, workload.tokens_per_prompt)?;

    let mut training_cal = calibration.clone();
    training_cal.rng_seed = calibration.rng_seed.wrapping_add(1);
    let training = gen_routing_trace(
        shape,
        &training_cal,
        workload.training_prompts,
        workload.tokens_per_prompt,
    )?;
    let pick = WeightedIndex::new(&workload.task_mix).map_err(|e| invalid("workload.task_mix", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(training_cal.rng_seed);
    let labels: Vec<TaskId> = (0..training.len())
        .map(|_| profiles[pick.sample(&mut rng)].task_id.clone())
        .collect();
    let predictor = TransitionModel::fit(shape, &training, &labels, workload.smoothing)?;

    let scenario = Scenario {
        shape: shape.clone(),
        profiles: profiles.to_vec(),
        requests,
        trace,
        predictor,
        config,
        cost,
    };
    scenario.validate()?;
    Ok(scenario)
}

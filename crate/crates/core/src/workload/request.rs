use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{TaskId, TaskProfile};
use crate::error::{invalid, Error, Result};

/// Generation is cut off at this many tokens.
pub const MAX_OUTPUT_TOKENS: usize = 1000;
const MAX_INPUT_TOKENS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Waiting,
    Scheduled,
    Running,
    Completed,
}

/// One inference request plus the bookkeeping the scheduler needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: u64,
    /// Seconds since the start of the trace.
    pub arrival_time: f64,
    pub task_id: TaskId,
    pub input_tokens: usize,
    pub slo_ttft: f64,
    /// Estimated tokens still to generate.
    pub remaining_gen_estimate: usize,
    pub initial_gen_estimate: usize,
    /// Seconds spent on the engine so far.
    pub runtime_so_far: f64,
    pub state: RequestState,
    /// Tokens this request will actually generate. Hidden from the scheduler.
    pub output_tokens: usize,
    pub generated_tokens: usize,
}

impl Request {
    pub fn new(
        request_id: u64,
        arrival_time: f64,
        task_id: TaskId,
        input_tokens: usize,
        slo_ttft: f64,
        gen_estimate: usize,
        output_tokens: usize,
    ) -> Result<Self> {
        if input_tokens == 0 {
            return Err(invalid("input_tokens", "must be at least 1"));
        }
        if output_tokens == 0 {
            return Err(invalid("output_tokens", "must be at least 1"));
        }
        Ok(Self {
            request_id,
            arrival_time,
            task_id,
            input_tokens,
            slo_ttft,
            remaining_gen_estimate: gen_estimate,
            initial_gen_estimate: gen_estimate,
            runtime_so_far: 0.0,
            state: RequestState::Waiting,
            output_tokens,
            generated_tokens: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.generated_tokens >= self.output_tokens
    }

    /// Moves to `to`; only waiting -> scheduled -> running -> completed is legal.
    pub fn transition(&mut self, to: RequestState) -> Result<()> {
        use RequestState::*;
        let ok = matches!(
            (self.state, to),
            (Waiting, Scheduled) | (Scheduled, Running) | (Running, Completed)
        );
        if !ok {
            return Err(Error::StateTransition {
                request_id: self.request_id,
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }
}

/// Poisson arrivals over `[0, duration)` with task types drawn from `task_mix`
/// (one weight per profile, summing to 1).
pub fn gen_request_trace(
    profiles: &[TaskProfile],
    rate: f64,
    duration: f64,
    task_mix: &[f64],
    seed: u64,
) -> Result<Vec<Request>> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(invalid("rate", format!("{rate} is not a non-negative rate")));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(invalid("duration", "must be non-negative"));
    }
    if task_mix.len() != profiles.len() {
        return Err(invalid(
            "task_mix",
            format!("{} weights for {} profiles", task_mix.len(), profiles.len()),
        ));
    }
    if task_mix.iter().any(|&w| !(w >= 0.0)) || (task_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("task_mix", "must be a probability vector"));
    }
    if rate == 0.0 || duration == 0.0 {
        return Ok(Vec::new());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(rate).map_err(|e| invalid("rate", e.to_string()))?;
    let pick = WeightedIndex::new(task_mix).map_err(|e| invalid("task_mix", e.to_string()))?;
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t >= duration {
            break;
        }
        let profile = &profiles[pick.sample(&mut rng)];
        let input = profile.input_length_dist.sample(&mut rng, MAX_INPUT_TOKENS);
        let output = profile.output_length_dist.sample(&mut rng, MAX_OUTPUT_TOKENS);
        let estimate = profile.expected_output_tokens.round().max(1.0) as usize;
        out.push(Request::new(
            out.len() as u64,
            t,
            profile.task_id.clone(),
            input,
            profile.slo_ttft,
            estimate,
            output,
        )?);
    }
    Ok(out)
}

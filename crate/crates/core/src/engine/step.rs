use std::collections::{BTreeMap, BTreeSet};

use crate::error::{invalid, Result};
use crate::expert_store::{route_token, Placement};
use crate::scheduler::update_generation_estimate;
use crate::workload::{Request, RequestState, RoutingTrace, TaskId};

use super::CostModel;

/// What one iteration sees besides the batch and the placement.
pub struct StepContext<'a> {
    pub trace: &'a RoutingTrace,
    pub cost: &'a CostModel,
    pub transfer_in_flight: bool,
    /// Fetch missing experts before computing (dynamic loading).
    pub on_demand: bool,
    /// Per-task `[layer][expert]` scores used when no gate choice is resident.
    pub fallback: &'a BTreeMap<TaskId, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub elapsed: f64,
    pub compute: f64,
    pub tokens_processed: usize,
    pub hits: u64,
    pub lookups: u64,
    /// Experts fetched per layer when loading on demand.
    pub on_demand_loads: Vec<usize>,
}

/// Token position in the routing trace of the `generated`-th output token.
fn token_slot(request: &Request, generated: usize, trace_tokens: usize) -> usize {
    (request.input_tokens + generated) % trace_tokens
}

/// Runs one decoding iteration: every request in `batch` produces one token.
///
/// Requests still in the scheduled state are moved to running and their
/// input tokens are processed in this iteration as well. `prompts[i]` is the
/// trace prompt that drives the routing of `batch[i]`.
pub fn iteration_step(
    batch: &mut [Request],
    prompts: &[usize],
    placement: &mut Placement,
    ctx: &StepContext<'_>,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(invalid("batch", "must not be empty"));
    }
    if prompts.len() != batch.len() || prompts.iter().any(|&p| p >= ctx.trace.len()) {
        return Err(invalid("prompts", "one valid trace prompt per request required"));
    }
    let trace_tokens = ctx.trace.prompts[0].tokens();
    let m = placement.num_layers();

    let mut tokens = batch.len();
    let mut prefill = vec![false; batch.len()];
    for (r, pre) in batch.iter_mut().zip(prefill.iter_mut()) {
        if r.state == RequestState::Scheduled {
            r.transition(RequestState::Running)?;
            tokens += r.input_tokens;
            *pre = true;
        }
    }

    let mut on_demand_loads = vec![0usize; m];
    let mut load_time = 0.0;
    if ctx.on_demand {
        let per_expert = ctx.cost.transfer_time(placement.expert_bytes());
        for (l, loads) in on_demand_loads.iter_mut().enumerate() {
            let mut needed = BTreeSet::new();
            for ((r, &p), &pre) in batch.iter().zip(prompts).zip(&prefill) {
                let prompt = &ctx.trace.prompts[p];
                if pre {
                    for t in 0..r.input_tokens.min(trace_tokens) {
                        needed.insert(prompt.top1(l, t));
                    }
                }
                needed.insert(prompt.top1(l, token_slot(r, r.generated_tokens, trace_tokens)));
            }
            *loads = needed.difference(placement.resident(l)).count();
            load_time += *loads as f64 * per_expert;
            placement.replace_layer(l, needed)?;
        }
    }

    let mut hits = 0u64;
    let mut lookups = 0u64;
    for (r, &p) in batch.iter().zip(prompts) {
        let prompt = &ctx.trace.prompts[p];
        let slot = token_slot(r, r.generated_tokens, trace_tokens);
        let scores = ctx.fallback.get(&r.task_id);
        for l in 0..m {
            let fallback: &[f64] = scores.map(|s| s[l].as_slice()).unwrap_or(&[]);
            let outcome = route_token(prompt.choice(l, slot), placement, l, fallback)?;
            hits += u64::from(outcome.hit);
            lookups += 1;
        }
    }

    let contention = if ctx.transfer_in_flight {
        ctx.cost.contention_factor
    } else {
        1.0
    };
    let compute = tokens as f64 * ctx.cost.per_token_cost * contention;
    let elapsed = compute + load_time;
    for r in batch.iter_mut() {
        r.generated_tokens += 1;
        r.runtime_so_far += elapsed;
        update_generation_estimate(r);
    }
    Ok(StepOutcome {
        elapsed,
        compute,
        tokens_processed: tokens,
        hits,
        lookups,
        on_demand_loads,
    })
}

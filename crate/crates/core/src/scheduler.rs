//! SLO-aware greedy admission.
//!
//! The expected latency of request `i` when new requests are admitted is
//!
//! ```text
//! t_i = dE + (W + n_i * G_i) * c + r_i
//! ```
//!
//! with `dE` the pending expert-transfer time, `W` the input tokens being
//! admitted, `n_i` the running requests expected to finish after `i`, `G_i`
//! its remaining generation estimate, `c` the per-token cost and `r_i` its
//! runtime so far.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::workload::{Request, RequestState};

/// Share of the initial estimate restored when `G_i` runs out early.
pub const GEN_ESTIMATE_RESET_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate<T> {
    pub expert_loading: T,
    pub compute_term: T,
    pub runtime_so_far: T,
    pub total: T,
    pub per_token_cost: T,
    pub rank_ahead: usize,
}

/// Evaluates the latency formula term by term.
pub fn latency_terms<T: Scalar>(
    delta_e: T,
    wait_tokens: T,
    rank_ahead: usize,
    remaining_gen: T,
    per_token_cost: T,
    runtime_so_far: T,
) -> LatencyEstimate<T> {
    let compute_term = (wait_tokens + T::from_count(rank_ahead) * remaining_gen) * per_token_cost;
    LatencyEstimate {
        expert_loading: delta_e,
        compute_term,
        runtime_so_far,
        total: delta_e + compute_term + runtime_so_far,
        per_token_cost,
        rank_ahead,
    }
}

/// Admitted requests still on the engine whose remaining estimate is at
/// least `request`'s. Equal estimates count as finishing later.
fn rank_ahead<'a>(request: &Request, others: impl IntoIterator<Item = &'a Request>) -> usize {
    others
        .into_iter()
        .filter(|s| s.request_id != request.request_id)
        .filter(|s| s.remaining_gen_estimate >= request.remaining_gen_estimate)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Admitted,
    TokenBudget,
    OwnSlo,
    RunningSlo,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Admitted => "admitted",
            Reason::TokenBudget => "token_budget",
            Reason::OwnSlo => "own_slo",
            Reason::RunningSlo => "running_slo",
        }
    }
}

/// Outcome for one waiting request in one scheduling call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub request_id: u64,
    pub reason: Reason,
    /// The candidate's own expected latency, when it got that far.
    pub expected_latency: Option<f64>,
    /// Scheduled tokens after this decision.
    pub scheduled_tokens: usize,
    /// First scheduled request whose SLO the candidate would have broken.
    pub blocked_by: Option<u64>,
}

impl Decision {
    pub fn admitted(&self) -> bool {
        self.reason == Reason::Admitted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    waiting: Vec<Request>,
    scheduled: Vec<Request>,
    token_budget: usize,
    scheduled_tokens: usize,
}

impl SchedulerState {
    pub fn new(token_budget: usize) -> Result<Self> {
        if token_budget == 0 {
            return Err(invalid("token_budget", "must be positive"));
        }
        Ok(Self {
            waiting: Vec::new(),
            scheduled: Vec::new(),
            token_budget,
            scheduled_tokens: 0,
        })
    }

    /// Builds a state from explicit queues (tests, replays).
    pub fn with_queues(token_budget: usize, waiting: Vec<Request>, scheduled: Vec<Request>) -> Result<Self> {
        let mut s = Self::new(token_budget)?;
        s.scheduled_tokens = scheduled.iter().map(|r| r.input_tokens).sum();
        if s.scheduled_tokens > token_budget {
            return Err(invalid("scheduled_queue", "input tokens exceed the token budget"));
        }
        s.waiting = waiting;
        s.scheduled = scheduled;
        Ok(s)
    }

    pub fn token_budget(&self) -> usize {
        self.token_budget
    }

    pub fn current_scheduled_tokens(&self) -> usize {
        self.scheduled_tokens
    }

    pub fn waiting(&self) -> &[Request] {
        &self.waiting
    }

    pub fn scheduled(&self) -> &[Request] {
        &self.scheduled
    }

    /// Mutable view for per-iteration bookkeeping. Callers must not change
    /// `input_tokens`.
    pub fn scheduled_mut(&mut self) -> &mut [Request] {
        &mut self.scheduled
    }

    pub fn enqueue(&mut self, request: Request) {
        self.waiting.push(request);
    }

    /// Removes a waiting request without scheduling it.
    pub fn drop_waiting(&mut self, request_id: u64) -> Option<Request> {
        let pos = self.waiting.iter().position(|r| r.request_id == request_id)?;
        Some(self.waiting.remove(pos))
    }

    /// Removes a finished request, releasing its tokens.
    pub fn complete(&mut self, request_id: u64) -> Option<Request> {
        let pos = self.scheduled.iter().position(|r| r.request_id == request_id)?;
        let r = self.scheduled.remove(pos);
        self.scheduled_tokens -= r.input_tokens;
        Some(r)
    }
}

/// Expected latency of `request` against the scheduled queue of `state`,
/// with no other tokens being admitted.
pub fn expected_latency(request: &Request, state: &SchedulerState, delta_e: f64, c: f64) -> LatencyEstimate<f64> {
    let wait = if request.state == RequestState::Waiting {
        request.input_tokens
    } else {
        0
    };
    latency_terms(
        delta_e,
        wait as f64,
        rank_ahead(request, &state.scheduled),
        request.remaining_gen_estimate as f64,
        c,
        request.runtime_so_far,
    )
}

fn slo_order(a: &Request, b: &Request) -> Ordering {
    a.slo_ttft
        .partial_cmp(&b.slo_ttft)
        .unwrap_or(Ordering::Equal)
        .then(a.arrival_time.partial_cmp(&b.arrival_time).unwrap_or(Ordering::Equal))
        .then(a.request_id.cmp(&b.request_id))
}

/// One greedy admission pass.
///
/// Waiting requests are tried from the tightest `slo_ttft`. A candidate is
/// admitted when its input fits strictly under the token budget, its own
/// expected latency is under its SLO, and every scheduled request currently
/// meeting its SLO still does with the candidate added. Tokens admitted
/// earlier in the same pass count towards `W` for later candidates.
pub fn schedule(state: &mut SchedulerState, delta_e: f64, c: f64) -> Vec<Decision> {
    let mut order = std::mem::take(&mut state.waiting);
    order.sort_by(slo_order);
    let mut decisions = Vec::with_capacity(order.len());
    let mut admitted_tokens = 0usize;

    for mut cand in order {
        if cand.input_tokens + state.scheduled_tokens >= state.token_budget {
            decisions.push(Decision {
                request_id: cand.request_id,
                reason: Reason::TokenBudget,
                expected_latency: None,
                scheduled_tokens: state.scheduled_tokens,
                blocked_by: None,
            });
            state.waiting.push(cand);
            continue;
        }
        let w_before = admitted_tokens as f64;
        let w_after = (admitted_tokens + cand.input_tokens) as f64;
        let own = latency_terms(
            delta_e,
            w_after,
            rank_ahead(&cand, &state.scheduled),
            cand.remaining_gen_estimate as f64,
            c,
            cand.runtime_so_far,
        );
        let mut reason = Reason::Admitted;
        let mut blocked_by = None;
        if !(own.total < cand.slo_ttft) {
            reason = Reason::OwnSlo;
        } else {
            for s in &state.scheduled {
                let n = rank_ahead(s, &state.scheduled);
                let g = s.remaining_gen_estimate as f64;
                let before = latency_terms(delta_e, w_before, n, g, c, s.runtime_so_far).total;
                if !(before < s.slo_ttft) {
                    continue;
                }
                let n_new = n + usize::from(cand.remaining_gen_estimate >= s.remaining_gen_estimate);
                let after = latency_terms(delta_e, w_after, n_new, g, c, s.runtime_so_far).total;
                if !(after < s.slo_ttft) {
                    reason = Reason::RunningSlo;
                    blocked_by = Some(s.request_id);
                    break;
                }
            }
        }
        if reason == Reason::Admitted {
            admitted_tokens += cand.input_tokens;
            state.scheduled_tokens += cand.input_tokens;
            // waiting requests are always in the waiting state
            cand.state = RequestState::Scheduled;
            decisions.push(Decision {
                request_id: cand.request_id,
                reason,
                expected_latency: Some(own.total),
                scheduled_tokens: state.scheduled_tokens,
                blocked_by,
            });
            state.scheduled.push(cand);
        } else {
            decisions.push(Decision {
                request_id: cand.request_id,
                reason,
                expected_latency: Some(own.total),
                scheduled_tokens: state.scheduled_tokens,
                blocked_by,
            });
            state.waiting.push(cand);
        }
    }
    decisions
}

/// Bookkeeping after `request` generated one token.
///
/// The estimate is decremented; if it runs out while the request is still
/// generating, it restarts at 5% of the initial estimate (at least one).
pub fn update_generation_estimate(request: &mut Request) {
    debug_assert_eq!(request.state, RequestState::Running);
    request.remaining_gen_estimate = request.remaining_gen_estimate.saturating_sub(1);
    if request.remaining_gen_estimate == 0 && !request.is_finished() {
        let reset = (GEN_ESTIMATE_RESET_FRACTION * request.initial_gen_estimate as f64).ceil() as usize;
        request.remaining_gen_estimate = reset.max(1);
    }
}

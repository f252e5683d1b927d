use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::events::{Event, EventKind};
use super::metrics::{collect_metrics, Metrics};
use super::step::{iteration_step, StepContext};
use super::{CostModel, EngineConfig, Mode};
use crate::error::{invalid, Result};
use crate::expert_store::{
    expected_tokens, plan_loading, select_experts, select_task_aware, LayerPlan, Placement, PlacementSnapshot,
    SensitivityMask,
};
use crate::predictor::{Prediction, TransitionModel};
use crate::scheduler::{schedule, SchedulerState};
use crate::workload::{ModelShape, Request, RequestState, RoutingTrace, TaskId, TaskProfile};

/// Everything one simulation run needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub shape: ModelShape,
    pub profiles: Vec<TaskProfile>,
    /// Requests in arrival order. The `i`-th is routed like trace prompt
    /// `i mod trace.len()`.
    pub requests: Vec<Request>,
    pub trace: RoutingTrace,
    pub predictor: TransitionModel<f64>,
    pub config: EngineConfig,
    pub cost: CostModel,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        let mut ids = BTreeSet::new();
        for p in &self.profiles {
            p.validate(&self.shape)?;
            if !ids.insert(&p.task_id) {
                return Err(invalid(format!("task.{}", p.task_id), "defined twice"));
            }
        }
        let mut seen = BTreeSet::new();
        let mut last = f64::NEG_INFINITY;
        for (i, r) in self.requests.iter().enumerate() {
            if !ids.contains(&r.task_id) {
                return Err(invalid(
                    format!("requests[{i}].task_id"),
                    format!("unknown task {}", r.task_id),
                ));
            }
            if !seen.insert(r.request_id) {
                return Err(invalid(format!("requests[{i}].request_id"), "duplicate id"));
            }
            if r.state != RequestState::Waiting || r.generated_tokens != 0 {
                return Err(invalid(format!("requests[{i}]"), "must be fresh"));
            }
            if !(r.arrival_time >= last) || !r.arrival_time.is_finite() {
                return Err(invalid(
                    format!("requests[{i}].arrival_time"),
                    "must be finite and sorted",
                ));
            }
            last = r.arrival_time;
        }
        if self.trace.is_empty() || !self.trace.conforms_to(&self.shape) {
            return Err(invalid("trace", "must be non-empty and match the model shape"));
        }
        self.trace.validate()?;
        let p = &self.predictor;
        if p.num_layers != self.shape.num_moe_layers
            || p.num_experts != self.shape.experts_per_layer
            || p.top_k != self.shape.top_k
        {
            return Err(invalid("predictor", "does not match the model shape"));
        }
        self.config.validate(&self.shape)?;
        self.cost.validate()
    }
}

/// Event log plus the metrics derived from it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub events: Vec<Event>,
    /// Every layer's resident set each time a plan finished applying.
    pub snapshots: Vec<PlacementSnapshot>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Wake {
    LoadComplete,
    IterationEnd,
    Arrival(usize),
    PredictorDone,
}

impl Wake {
    fn class(self) -> u8 {
        match self {
            Wake::LoadComplete => 0,
            Wake::IterationEnd => 1,
            Wake::Arrival(_) => 2,
            Wake::PredictorDone => 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    seq: u64,
    wake: Wake,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap pops the earliest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.wake.class().cmp(&self.wake.class()))
            .then(other.seq.cmp(&self.seq))
    }
}

struct QueuedLayer {
    invocation: usize,
    plan: LayerPlan,
    duration: f64,
    last_of_plan: bool,
}

struct Invocation {
    index: usize,
    prompt_index: usize,
    /// Trace prompt of the previously admitted request.
    history: Option<usize>,
}

struct Sim<'a> {
    sc: &'a Scenario,
    now: f64,
    seq: u64,
    heap: BinaryHeap<Pending>,
    events: Vec<Event>,
    snapshots: Vec<PlacementSnapshot>,
    sched: SchedulerState,
    placement: Placement,
    projected: Placement,
    transfers: VecDeque<QueuedLayer>,
    active_transfer: Option<(QueuedLayer, f64)>,
    predictor_queue: VecDeque<Invocation>,
    active_invocation: Option<Invocation>,
    iteration: Option<Vec<u64>>,
    pending_hits: (u64, u64),
    admissions: usize,
    invocations: usize,
    last_prompt: Option<usize>,
    prompt_of: BTreeMap<u64, usize>,
    rng: ChaCha8Rng,
    priors: BTreeMap<TaskId, Vec<Vec<f64>>>,
}

/// Runs a scenario to completion.
pub fn run(sc: &Scenario) -> Result<RunOutput> {
    sc.validate()?;
    let (m, e) = (sc.shape.num_moe_layers, sc.shape.experts_per_layer);
    let placement = match sc.config.mode {
        Mode::Dynamic => Placement::empty(&sc.shape, vec![e; m])?,
        mode if mode.is_periodic() => {
            let mut p = Placement::full(&sc.shape);
            p.set_budgets(sc.config.budgets.clone())?;
            p
        }
        _ => Placement::full(&sc.shape),
    };
    let priors = sc
        .profiles
        .iter()
        .map(|p| {
            let prior = p
                .routing_prior
                .clone()
                .unwrap_or_else(|| sc.predictor.predicted_frequencies(&p.task_id));
            (p.task_id.clone(), prior)
        })
        .collect();
    let mut sim = Sim {
        sc,
        now: 0.0,
        seq: 0,
        heap: BinaryHeap::new(),
        events: Vec::new(),
        snapshots: Vec::new(),
        sched: SchedulerState::new(sc.config.token_budget)?,
        projected: placement.clone(),
        placement,
        transfers: VecDeque::new(),
        active_transfer: None,
        predictor_queue: VecDeque::new(),
        active_invocation: None,
        iteration: None,
        pending_hits: (0, 0),
        admissions: 0,
        invocations: 0,
        last_prompt: None,
        prompt_of: BTreeMap::new(),
        rng: ChaCha8Rng::seed_from_u64(sc.config.seed),
        priors,
    };
    sim.log(EventKind::Memory {
        bytes: sim.placement.device_bytes_used(),
    });
    for (i, r) in sc.requests.iter().enumerate() {
        sim.prompt_of.insert(r.request_id, i % sc.trace.len());
        sim.push(r.arrival_time, Wake::Arrival(i));
    }
    while let Some(p) = sim.heap.pop() {
        sim.now = p.time;
        match p.wake {
            Wake::Arrival(i) => sim.on_arrival(i)?,
            Wake::IterationEnd => sim.on_iteration_end()?,
            Wake::LoadComplete => sim.on_load_complete()?,
            Wake::PredictorDone => sim.on_predictor_done()?,
        }
    }
    let leftover: Vec<u64> = sim.sched.waiting().iter().map(|r| r.request_id).collect();
    for id in leftover {
        sim.sched.drop_waiting(id);
        sim.log(EventKind::Dropped { request_id: id });
    }
    let metrics = collect_metrics(&sim.events);
    Ok(RunOutput {
        events: sim.events,
        snapshots: sim.snapshots,
        metrics,
    })
}

impl Sim<'_> {
    fn log(&mut self, kind: EventKind) {
        self.events.push(Event { time: self.now, kind });
    }

    fn plan_applied(&mut self, invocation: usize) {
        self.log(EventKind::PlanApplied { invocation });
        for l in 0..self.placement.num_layers() {
            self.snapshots.push(self.placement.snapshot(self.now, l));
        }
    }

    fn push(&mut self, time: f64, wake: Wake) {
        self.seq += 1;
        self.heap.push(Pending {
            time,
            seq: self.seq,
            wake,
        });
    }

    /// Transfer time still ahead: the active layer plus everything queued.
    fn delta_e(&self) -> f64 {
        let active = self.active_transfer.as_ref().map_or(0.0, |(_, end)| end - self.now);
        active + self.transfers.iter().map(|q| q.duration).sum::<f64>()
    }

    fn on_arrival(&mut self, i: usize) -> Result<()> {
        let r = self.sc.requests[i].clone();
        self.log(EventKind::Arrival {
            request_id: r.request_id,
            task_id: r.task_id.clone(),
            slo_ttft: r.slo_ttft,
        });
        self.sched.enqueue(r);
        self.run_scheduler();
        self.try_start_iteration()
    }

    fn run_scheduler(&mut self) {
        if self.sched.waiting().is_empty() {
            return;
        }
        let delta_e = self.delta_e();
        for d in schedule(&mut self.sched, delta_e, self.sc.cost.per_token_cost) {
            self.log(EventKind::Decision {
                request_id: d.request_id,
                reason: d.reason,
                expected_latency: d.expected_latency,
                scheduled_tokens: d.scheduled_tokens,
                delta_e,
            });
            if d.admitted() {
                self.on_admit(d.request_id);
            }
        }
        // With nothing admitted and no transfer pending, the remaining
        // requests already face their lowest possible estimate.
        if self.sched.scheduled().is_empty() && delta_e == 0.0 {
            let stuck: Vec<u64> = self.sched.waiting().iter().map(|r| r.request_id).collect();
            for id in stuck {
                self.sched.drop_waiting(id);
                self.log(EventKind::Dropped { request_id: id });
            }
        }
    }

    fn on_admit(&mut self, request_id: u64) {
        let index = self.admissions;
        self.admissions += 1;
        let prompt = self.prompt_of[&request_id];
        let history = self.last_prompt.replace(prompt);
        if self.sc.config.invokes_at(index) {
            self.predictor_queue.push_back(Invocation {
                index: self.invocations,
                prompt_index: index,
                history,
            });
            self.invocations += 1;
            self.start_predictor();
        }
    }

    fn start_predictor(&mut self) {
        if self.active_invocation.is_some() {
            return;
        }
        let Some(inv) = self.predictor_queue.pop_front() else {
            return;
        };
        let cost = match self.sc.config.mode {
            Mode::EmoeL => self.sc.cost.predictor_cost(true),
            m if m.predicts() => self.sc.cost.predictor_cost(false),
            _ => 0.0,
        };
        self.log(EventKind::PredictorStart {
            invocation: inv.index,
            prompt_index: inv.prompt_index,
        });
        self.active_invocation = Some(inv);
        self.push(self.now + cost, Wake::PredictorDone);
    }

    fn predict(&self, history: usize) -> Result<Prediction<f64>> {
        let prompt = &self.sc.trace.prompts[history];
        let k = self.sc.shape.top_k;
        match self.sc.config.mode {
            Mode::EmoeL => self
                .sc
                .predictor
                .predict_layerwise_chain(&prompt.frequent_experts(0, k)),
            _ => {
                let prev: Vec<Vec<usize>> = (0..self.sc.shape.num_moe_layers)
                    .map(|l| prompt.frequent_experts(l, k))
                    .collect();
                self.sc.predictor.predict_all_layers(&prev)
            }
        }
    }

    /// Target placement and the transfer time of the task-agnostic choice.
    fn choose_targets(&mut self, inv: &Invocation) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        let budgets = &self.sc.config.budgets;
        if self.sc.config.mode == Mode::Random {
            let e = self.sc.shape.experts_per_layer;
            let t: Vec<Vec<usize>> = budgets
                .iter()
                .map(|&b| sample(&mut self.rng, e, b).into_vec())
                .collect();
            return Ok((t.clone(), t));
        }
        let prediction = inv.history.map(|h| self.predict(h)).transpose()?;
        let w = self.sc.config.frequency_prior_weight;
        let frequencies: BTreeMap<TaskId, Vec<Vec<f64>>> = self
            .priors
            .iter()
            .map(|(task, prior)| {
                let f = match &prediction {
                    None => prior.clone(),
                    Some(p) => p
                        .layers
                        .iter()
                        .zip(prior)
                        .map(|(lp, pr)| {
                            lp.normalized()
                                .iter()
                                .zip(pr)
                                .map(|(a, b)| (1.0 - w) * a + w * b)
                                .collect()
                        })
                        .collect(),
                };
                (task.clone(), f)
            })
            .collect();
        let running = self.sched.scheduled();
        let incoming = self.sched.waiting();
        let agnostic = expected_tokens(
            &self.sc.shape,
            &self.sc.profiles,
            running,
            incoming,
            &frequencies,
            SensitivityMask::Agnostic,
        )?;
        let agnostic_target = select_experts(&agnostic.aggregate, budgets)?;
        if !self.sc.config.task_aware {
            return Ok((agnostic_target.clone(), agnostic_target));
        }
        let aware = expected_tokens(
            &self.sc.shape,
            &self.sc.profiles,
            running,
            incoming,
            &frequencies,
            SensitivityMask::TaskAware,
        )?;
        let target = select_task_aware(&aware.aggregate, &agnostic.aggregate, &self.projected, budgets)?;
        Ok((target, agnostic_target))
    }

    fn on_predictor_done(&mut self) -> Result<()> {
        let inv = self
            .active_invocation
            .take()
            .ok_or_else(|| invalid("predictor", "completion without a call"))?;
        self.log(EventKind::PredictorEnd { invocation: inv.index });
        let (target, agnostic_target) = self.choose_targets(&inv)?;
        let plan = plan_loading(&self.projected, &target, &self.sc.cost)?;
        let agnostic_plan = plan_loading(&self.projected, &agnostic_target, &self.sc.cost)?;
        self.log(EventKind::Plan {
            invocation: inv.index,
            loads: plan.num_loads(),
            delta_e: plan.estimated_latency,
            delta_e_agnostic: agnostic_plan.estimated_latency,
        });
        self.projected.apply(&plan)?;
        let per_load = self.sc.cost.transfer_time(self.sc.shape.expert_bytes);
        let layers: Vec<LayerPlan> = plan.layers.into_iter().filter(|l| !l.ops.is_empty()).collect();
        if layers.is_empty() {
            self.plan_applied(inv.index);
        }
        let n = layers.len();
        for (i, layer) in layers.into_iter().enumerate() {
            self.transfers.push_back(QueuedLayer {
                invocation: inv.index,
                duration: layer.num_loads() as f64 * per_load,
                plan: layer,
                last_of_plan: i + 1 == n,
            });
        }
        self.start_transfer();
        self.start_predictor();
        if self.sched.scheduled().is_empty() {
            self.run_scheduler();
        }
        self.try_start_iteration()
    }

    fn start_transfer(&mut self) {
        if self.active_transfer.is_some() {
            return;
        }
        let Some(q) = self.transfers.pop_front() else {
            return;
        };
        self.log(EventKind::LoadStart {
            invocation: q.invocation,
            layer: q.plan.layer,
            loads: q.plan.num_loads(),
        });
        let end = self.now + q.duration;
        self.active_transfer = Some((q, end));
        self.push(end, Wake::LoadComplete);
    }

    fn on_load_complete(&mut self) -> Result<()> {
        let (q, _) = self
            .active_transfer
            .take()
            .ok_or_else(|| invalid("transfer", "completion without a transfer"))?;
        self.placement.apply_layer(&q.plan)?;
        self.log(EventKind::LoadComplete {
            invocation: q.invocation,
            layer: q.plan.layer,
            loads: q.plan.num_loads(),
        });
        self.log(EventKind::Memory {
            bytes: self.placement.device_bytes_used(),
        });
        if q.last_of_plan {
            self.plan_applied(q.invocation);
        }
        self.start_transfer();
        if self.sched.scheduled().is_empty() {
            self.run_scheduler();
        }
        self.try_start_iteration()
    }

    fn try_start_iteration(&mut self) -> Result<()> {
        if self.iteration.is_some() || self.sched.scheduled().is_empty() {
            return Ok(());
        }
        if self.sc.config.mode == Mode::EmoeE && self.active_invocation.is_some() {
            return Ok(());
        }
        let prompts: Vec<usize> = self
            .sched
            .scheduled()
            .iter()
            .map(|r| self.prompt_of[&r.request_id])
            .collect();
        let ids: Vec<u64> = self.sched.scheduled().iter().map(|r| r.request_id).collect();
        let transfer_in_flight = self.active_transfer.is_some();
        let on_demand = self.sc.config.mode == Mode::Dynamic;
        let fallback = &self.priors;
        let ctx = StepContext {
            trace: &self.sc.trace,
            cost: &self.sc.cost,
            transfer_in_flight,
            on_demand,
            fallback,
        };
        let out = iteration_step(self.sched.scheduled_mut(), &prompts, &mut self.placement, &ctx)?;
        self.log(EventKind::IterationStart {
            batch: ids.len(),
            tokens: out.tokens_processed,
            contended: transfer_in_flight,
        });
        if on_demand {
            for (layer, &loads) in out.on_demand_loads.iter().enumerate() {
                if loads > 0 {
                    self.log(EventKind::OnDemandLoad { layer, loads });
                }
            }
            if out.on_demand_loads.iter().any(|&l| l > 0) {
                self.log(EventKind::Memory {
                    bytes: self.placement.device_bytes_used(),
                });
            }
        }
        self.iteration = Some(ids);
        self.pending_hits = (out.hits, out.lookups);
        self.push(self.now + out.elapsed, Wake::IterationEnd);
        Ok(())
    }

    fn on_iteration_end(&mut self) -> Result<()> {
        let ids = self
            .iteration
            .take()
            .ok_or_else(|| invalid("iteration", "completion without an iteration"))?;
        let (hits, lookups) = self.pending_hits;
        self.log(EventKind::IterationEnd {
            batch: ids.len(),
            hits,
            lookups,
            generated: ids.len() as u64,
        });
        let mut any_done = false;
        for id in ids {
            let Some(r) = self.sched.scheduled().iter().find(|r| r.request_id == id) else {
                continue;
            };
            let (first, done) = (r.generated_tokens == 1, r.is_finished());
            if first {
                self.log(EventKind::FirstToken { request_id: id });
            }
            if done {
                let mut r = self.sched.complete(id).expect("request is scheduled");
                r.transition(RequestState::Completed)?;
                self.log(EventKind::Completion {
                    request_id: id,
                    tokens: r.generated_tokens,
                });
                any_done = true;
            }
        }
        if any_done {
            self.run_scheduler();
        }
        self.try_start_iteration()
    }
}

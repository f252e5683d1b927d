use std::io::Write;

use crate::error::Result;
use crate::scheduler::Reason;
use crate::workload::TaskId;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Arrival {
        request_id: u64,
        task_id: TaskId,
        slo_ttft: f64,
    },
    Decision {
        request_id: u64,
        reason: Reason,
        expected_latency: Option<f64>,
        scheduled_tokens: usize,
        delta_e: f64,
    },
    /// A waiting request that can never be admitted.
    Dropped {
        request_id: u64,
    },
    IterationStart {
        batch: usize,
        tokens: usize,
        contended: bool,
    },
    IterationEnd {
        batch: usize,
        hits: u64,
        lookups: u64,
        generated: u64,
    },
    FirstToken {
        request_id: u64,
    },
    Completion {
        request_id: u64,
        tokens: usize,
    },
    PredictorStart {
        invocation: usize,
        prompt_index: usize,
    },
    PredictorEnd {
        invocation: usize,
    },
    /// Transfer plan chosen by an invocation, with the transfer time of the
    /// plan that ignores task sensitivity for comparison.
    Plan {
        invocation: usize,
        loads: usize,
        delta_e: f64,
        delta_e_agnostic: f64,
    },
    LoadStart {
        invocation: usize,
        layer: usize,
        loads: usize,
    },
    LoadComplete {
        invocation: usize,
        layer: usize,
        loads: usize,
    },
    /// Every layer of an invocation's plan is in place.
    PlanApplied {
        invocation: usize,
    },
    OnDemandLoad {
        layer: usize,
        loads: usize,
    },
    Memory {
        bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

pub const EVENT_CSV_HEADER: &str = "time,event,request_id,layer,invocation,count,value,aux,detail";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self.kind {
            EventKind::Arrival { .. } => "arrival",
            EventKind::Decision { .. } => "decision",
            EventKind::Dropped { .. } => "dropped",
            EventKind::IterationStart { .. } => "iteration_start",
            EventKind::IterationEnd { .. } => "iteration_end",
            EventKind::FirstToken { .. } => "first_token",
            EventKind::Completion { .. } => "completion",
            EventKind::PredictorStart { .. } => "predictor_start",
            EventKind::PredictorEnd { .. } => "predictor_end",
            EventKind::Plan { .. } => "plan",
            EventKind::LoadStart { .. } => "load_start",
            EventKind::LoadComplete { .. } => "load_complete",
            EventKind::PlanApplied { .. } => "plan_applied",
            EventKind::OnDemandLoad { .. } => "on_demand_load",
            EventKind::Memory { .. } => "memory",
        }
    }

    /// One row under [`EVENT_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        use EventKind::*;
        let (req, layer, inv, count, value, aux, detail): (
            Option<u64>,
            Option<usize>,
            Option<usize>,
            Option<u64>,
            Option<f64>,
            Option<f64>,
            String,
        ) = match &self.kind {
            Arrival {
                request_id,
                task_id,
                slo_ttft,
            } => (
                Some(*request_id),
                None,
                None,
                None,
                Some(*slo_ttft),
                None,
                task_id.to_string(),
            ),
            Decision {
                request_id,
                reason,
                expected_latency,
                scheduled_tokens,
                delta_e,
            } => (
                Some(*request_id),
                None,
                None,
                Some(*scheduled_tokens as u64),
                *expected_latency,
                Some(*delta_e),
                reason.as_str().to_string(),
            ),
            Dropped { request_id } => (Some(*request_id), None, None, None, None, None, String::new()),
            IterationStart {
                batch,
                tokens,
                contended,
            } => (
                None,
                None,
                None,
                Some(*batch as u64),
                Some(*tokens as f64),
                None,
                if *contended { "contended".into() } else { String::new() },
            ),
            IterationEnd {
                batch,
                hits,
                lookups,
                generated,
            } => (
                None,
                None,
                None,
                Some(*batch as u64),
                Some(*hits as f64),
                Some(*lookups as f64),
                generated.to_string(),
            ),
            FirstToken { request_id } => (Some(*request_id), None, None, None, None, None, String::new()),
            Completion { request_id, tokens } => (
                Some(*request_id),
                None,
                None,
                Some(*tokens as u64),
                None,
                None,
                String::new(),
            ),
            PredictorStart {
                invocation,
                prompt_index,
            } => (
                None,
                None,
                Some(*invocation),
                Some(*prompt_index as u64),
                None,
                None,
                String::new(),
            ),
            PredictorEnd { invocation } => (None, None, Some(*invocation), None, None, None, String::new()),
            Plan {
                invocation,
                loads,
                delta_e,
                delta_e_agnostic,
            } => (
                None,
                None,
                Some(*invocation),
                Some(*loads as u64),
                Some(*delta_e),
                Some(*delta_e_agnostic),
                String::new(),
            ),
            LoadStart {
                invocation,
                layer,
                loads,
            }
            | LoadComplete {
                invocation,
                layer,
                loads,
            } => (
                None,
                Some(*layer),
                Some(*invocation),
                Some(*loads as u64),
                None,
                None,
                String::new(),
            ),
            PlanApplied { invocation } => (None, None, Some(*invocation), None, None, None, String::new()),
            OnDemandLoad { layer, loads } => (None, Some(*layer), None, Some(*loads as u64), None, None, String::new()),
            Memory { bytes } => (None, None, None, Some(*bytes), None, None, String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.time,
            self.name(),
            opt(req),
            opt(layer),
            opt(inv),
            opt(count),
            opt(value),
            opt(aux),
            detail
        )
    }
}

pub fn write_events_csv<W: Write>(mut out: W, events: &[Event]) -> Result<()> {
    writeln!(out, "{EVENT_CSV_HEADER}")?;
    for e in events {
        writeln!(out, "{}", e.csv_row())?;
    }
    Ok(())
}

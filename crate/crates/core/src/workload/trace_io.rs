//! Newline-delimited JSON routing traces, one prompt per line:
//!
//! ```text
//! {"prompt_index":0,"task_id":"SUM","routing":[[[3,1],[3,5]],[[2,3],[2,0]]]}
//! ```
//!
//! `routing[layer][token]` lists the gate's top-k experts, best first.
//! `task_id` is optional.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{PromptRouting, RoutingTrace, TaskId};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    prompt_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task_id: Option<TaskId>,
    routing: Vec<Vec<Vec<usize>>>,
}

/// Writes `trace`; `task_ids`, when given, must have one label per prompt.
pub fn write_trace<W: Write>(mut out: W, trace: &RoutingTrace, task_ids: Option<&[TaskId]>) -> Result<()> {
    if let Some(ids) = task_ids {
        if ids.len() != trace.len() {
            return Err(invalid("task_ids", "one label per prompt required"));
        }
    }
    for (n, p) in trace.prompts.iter().enumerate() {
        let rec = TraceRecord {
            prompt_index: n,
            task_id: task_ids.map(|ids| ids[n].clone()),
            routing: p.to_nested(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a trace for a model with `num_experts` experts per layer. Records
/// must appear in `prompt_index` order.
pub fn read_trace<R: BufRead>(input: R, num_experts: usize) -> Result<(RoutingTrace, Vec<Option<TaskId>>)> {
    let mut prompts = Vec::new();
    let mut tasks = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if rec.prompt_index != prompts.len() {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("expected prompt_index {}, found {}", prompts.len(), rec.prompt_index),
            });
        }
        let k = rec
            .routing
            .first()
            .and_then(|l| l.first())
            .map(Vec::len)
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: "empty routing".into(),
            })?;
        let here = (rec.routing.len(), k);
        if *dims.get_or_insert(here) != here {
            return Err(Error::Parse {
                line: i + 1,
                reason: "layer count or top-k differs from earlier records".into(),
            });
        }
        let p = PromptRouting::from_nested(&rec.routing, num_experts, k).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        prompts.push(p);
        tasks.push(rec.task_id);
    }
    let (num_layers, top_k) = dims.ok_or_else(|| invalid("trace", "no records"))?;
    let trace = RoutingTrace {
        num_layers,
        num_experts,
        top_k,
        prompts,
    };
    Ok((trace, tasks))
}

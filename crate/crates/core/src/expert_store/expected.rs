use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::workload::{ModelShape, Request, TaskId, TaskProfile};

/// Whether per-layer task sensitivity zeroes a task's contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMask {
    TaskAware,
    Agnostic,
}

/// Expected tokens per `[task][layer][expert]`, plus the sum over tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedTokens3D<T> {
    pub tasks: Vec<TaskId>,
    pub per_task: Vec<Vec<Vec<T>>>,
    pub aggregate: Vec<Vec<T>>,
}

impl<T: Scalar> ExpectedTokens3D<T> {
    pub fn for_task(&self, task: &TaskId) -> Option<&Vec<Vec<T>>> {
        self.tasks.iter().position(|t| t == task).map(|i| &self.per_task[i])
    }

    /// True when no task contributes anything at `layer`.
    pub fn layer_is_zero(&self, layer: usize) -> bool {
        self.aggregate[layer].iter().all(|v| *v == T::zero())
    }
}

/// Expected tokens routed to each expert.
///
/// For every task with `T` requests among `running` and `incoming`, with
/// input lengths `W_j`, profiled output length `W_o`, layer sensitivity `s`
/// and routing frequency `f_i`:
///
/// ```text
/// N_i = (sum_j W_j + T * W_o) * s * f_i
/// ```
///
/// With [`SensitivityMask::Agnostic`] every `s` is taken as 1.
pub fn expected_tokens<T: Scalar>(
    shape: &ModelShape,
    profiles: &[TaskProfile],
    running: &[Request],
    incoming: &[Request],
    frequencies: &BTreeMap<TaskId, Vec<Vec<T>>>,
    mask: SensitivityMask,
) -> Result<ExpectedTokens3D<T>> {
    let (m, e) = (shape.num_moe_layers, shape.experts_per_layer);
    // task -> (sum of input tokens, request count)
    let mut demand: BTreeMap<&TaskId, (usize, usize)> = BTreeMap::new();
    for r in running.iter().chain(incoming) {
        let d = demand.entry(&r.task_id).or_default();
        d.0 += r.input_tokens;
        d.1 += 1;
    }

    let mut out = ExpectedTokens3D {
        tasks: Vec::with_capacity(demand.len()),
        per_task: Vec::with_capacity(demand.len()),
        aggregate: vec![vec![T::zero(); e]; m],
    };
    for (task, (input_sum, count)) in demand {
        let profile = profiles
            .iter()
            .find(|p| &p.task_id == task)
            .ok_or_else(|| invalid("task_id", format!("no profile for task {task}")))?;
        if profile.sensitivity.len() != m {
            return Err(invalid(
                format!("task.{task}.sensitivity"),
                "length differs from the model",
            ));
        }
        let freq = frequencies
            .get(task)
            .ok_or_else(|| invalid("frequencies", format!("missing for task {task}")))?;
        if freq.len() != m || freq.iter().any(|row| row.len() != e) {
            return Err(invalid(format!("frequencies.{task}"), "must be m rows of E entries"));
        }
        let w_o = T::from_f64(profile.expected_output_tokens)
            .ok_or_else(|| invalid(format!("task.{task}.expected_output_tokens"), "not representable"))?;
        let volume = T::from_count(input_sum) + T::from_count(count) * w_o;

        let mut table = vec![vec![T::zero(); e]; m];
        for l in 0..m {
            let sensitive = match mask {
                SensitivityMask::TaskAware => profile.sensitivity[l],
                SensitivityMask::Agnostic => true,
            };
            if !sensitive {
                continue;
            }
            for (x, (&f, agg)) in table[l].iter_mut().zip(freq[l].iter().zip(out.aggregate[l].iter_mut())) {
                *x = volume * f;
                *agg = *agg + *x;
            }
        }
        out.tasks.push(task.clone());
        out.per_task.push(table);
    }
    Ok(out)
}

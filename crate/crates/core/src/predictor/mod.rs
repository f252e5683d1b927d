//! Expert prediction from past routing.
//!
//! [`TransitionModel`] keeps exact transition tallies and turns them into
//! additively smoothed probabilities on demand. Two prediction routes are
//! offered: layer by layer within a prompt ([`TransitionModel::predict_layerwise`])
//! and all layers at once from the previous prompt
//! ([`TransitionModel::predict_all_layers`]).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{rank_descending, Real};
use crate::workload::{ModelShape, PromptRouting, RoutingTrace, TaskId};

pub const DEFAULT_SMOOTHING: f64 = 0.01;

/// Square count matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    dim: usize,
    counts: Vec<u64>,
}

impl CountMatrix {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            counts: vec![0; dim * dim],
        }
    }

    fn bump(&mut self, from: usize, to: usize) {
        self.counts[from * self.dim + to] += 1;
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.counts[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.dim + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Smoothed probability vector from raw counts. Falls back to uniform when
/// there is neither data nor smoothing.
fn smoothed<T: Real>(counts: &[u64], smoothing: T) -> Vec<T> {
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    let denom = T::from_f64_lossy(total as f64) + smoothing * T::from_count(n);
    if denom <= T::zero() {
        return vec![T::one() / T::from_count(n); n];
    }
    counts
        .iter()
        .map(|&c| (T::from_f64_lossy(c as f64) + smoothing) / denom)
        .collect()
}

/// Scores for one layer plus the top-k indices (descending score, ties by
/// ascending index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPrediction<T> {
    pub scores: Vec<T>,
    pub top_k: Vec<usize>,
}

impl<T: Real> LayerPrediction<T> {
    fn from_scores(scores: Vec<T>, k: usize) -> Self {
        let top_k = rank_descending(&scores).into_iter().take(k).collect();
        Self { scores, top_k }
    }

    /// Scores rescaled to sum to one.
    pub fn normalized(&self) -> Vec<T> {
        let total = self.scores.iter().fold(T::zero(), |a, &b| a + b);
        if total <= T::zero() {
            let n = T::from_count(self.scores.len());
            return vec![T::one() / n; self.scores.len()];
        }
        self.scores.iter().map(|&s| s / total).collect()
    }
}

/// Predicted experts for every MoE layer of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T> {
    pub layers: Vec<LayerPrediction<T>>,
}

/// Smoothed first-order transition model over expert indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct TransitionModel<T> {
    pub num_layers: usize,
    pub num_experts: usize,
    pub top_k: usize,
    /// `layer_models[l]` counts top-1 transitions from layer `l` to `l + 1`.
    pub layer_models: Vec<CountMatrix>,
    /// `prompt_models[l]` counts, at layer `l`, transitions from a prompt's
    /// most frequent experts to the next prompt's token-level top-1 choices.
    pub prompt_models: Vec<CountMatrix>,
    /// Per task, per layer, top-1 counts per expert.
    pub task_counts: BTreeMap<TaskId, Vec<Vec<u64>>>,
    pub smoothing: T,
}

impl<T: Real> TransitionModel<T> {
    pub fn new(shape: &ModelShape, smoothing: T) -> Result<Self> {
        shape.validate()?;
        if !(smoothing >= T::zero()) {
            return Err(invalid("smoothing", "must be non-negative"));
        }
        let (m, e) = (shape.num_moe_layers, shape.experts_per_layer);
        Ok(Self {
            num_layers: m,
            num_experts: e,
            top_k: shape.top_k,
            layer_models: vec![CountMatrix::new(e); m - 1],
            prompt_models: vec![CountMatrix::new(e); m],
            task_counts: BTreeMap::new(),
            smoothing,
        })
    }

    /// Fits a fresh model. `task_ids` labels each prompt of `trace`.
    pub fn fit(shape: &ModelShape, trace: &RoutingTrace, task_ids: &[TaskId], smoothing: T) -> Result<Self> {
        if trace.is_empty() {
            return Err(invalid("trace", "must contain at least one prompt"));
        }
        let mut model = Self::new(shape, smoothing)?;
        model.observe(trace, task_ids)?;
        Ok(model)
    }

    /// Adds the tallies of `trace` to the model.
    pub fn observe(&mut self, trace: &RoutingTrace, task_ids: &[TaskId]) -> Result<()> {
        if trace.num_layers != self.num_layers || trace.num_experts != self.num_experts {
            return Err(invalid("trace", "does not match the model shape"));
        }
        if task_ids.len() != trace.len() {
            return Err(invalid(
                "task_ids",
                format!("{} labels for {} prompts", task_ids.len(), trace.len()),
            ));
        }
        for (prompt, task) in trace.prompts.iter().zip(task_ids) {
            self.observe_prompt(prompt, task);
        }
        for pair in trace.prompts.windows(2) {
            self.observe_prompt_pair(&pair[0], &pair[1]);
        }
        Ok(())
    }

    fn observe_prompt(&mut self, prompt: &PromptRouting, task: &TaskId) {
        let (m, e) = (self.num_layers, self.num_experts);
        let per_task = self
            .task_counts
            .entry(task.clone())
            .or_insert_with(|| vec![vec![0; e]; m]);
        for t in 0..prompt.tokens() {
            for l in 0..m {
                let here = prompt.top1(l, t);
                per_task[l][here] += 1;
                if l + 1 < m {
                    self.layer_models[l].bump(here, prompt.top1(l + 1, t));
                }
            }
        }
    }

    fn observe_prompt_pair(&mut self, prev: &PromptRouting, next: &PromptRouting) {
        for l in 0..self.num_layers {
            for from in prev.frequent_experts(l, self.top_k) {
                for t in 0..next.tokens() {
                    self.prompt_models[l].bump(from, next.top1(l, t));
                }
            }
        }
    }

    /// Smoothed transition probabilities from expert `from` at layer `layer`
    /// to each expert at `layer + 1`.
    pub fn layer_row(&self, layer: usize, from: usize) -> Vec<T> {
        smoothed(self.layer_models[layer].row(from), self.smoothing)
    }

    /// Smoothed probabilities that the next prompt routes to each expert at
    /// `layer`, given `from` was frequent at `layer` in this prompt.
    pub fn prompt_row(&self, layer: usize, from: usize) -> Vec<T> {
        smoothed(self.prompt_models[layer].row(from), self.smoothing)
    }

    fn check_experts(&self, experts: &[usize], key: &str) -> Result<()> {
        if experts.is_empty() {
            return Err(invalid(key, "no experts given"));
        }
        if let Some(&e) = experts.iter().find(|&&e| e >= self.num_experts) {
            return Err(invalid(key, format!("expert {e} out of range")));
        }
        Ok(())
    }

    fn mean_rows(&self, experts: &[usize], row: impl Fn(usize) -> Vec<T>) -> Vec<T> {
        let mut scores = vec![T::zero(); self.num_experts];
        for &e in experts {
            for (s, p) in scores.iter_mut().zip(row(e)) {
                *s = *s + p;
            }
        }
        let n = T::from_count(experts.len());
        scores.iter_mut().for_each(|s| *s = *s / n);
        scores
    }

    /// Predicts layer `layer` (1 <= layer < m) from the experts chosen at
    /// `layer - 1`: the score vector is the mean of their transition rows.
    pub fn predict_layerwise(&self, prev_layer_experts: &[usize], layer: usize) -> Result<LayerPrediction<T>> {
        if layer == 0 || layer >= self.num_layers {
            return Err(invalid("layer", format!("{layer} is outside 1..{}", self.num_layers)));
        }
        self.check_experts(prev_layer_experts, "prev_layer_experts")?;
        let scores = self.mean_rows(prev_layer_experts, |e| self.layer_row(layer - 1, e));
        Ok(LayerPrediction::from_scores(scores, self.top_k))
    }

    /// Layer-by-layer prediction of a whole prompt. The first layer reuses
    /// the previous prompt's first-layer experts; each later layer is
    /// predicted from the top-k of the layer before it.
    pub fn predict_layerwise_chain(&self, prev_first_layer: &[usize]) -> Result<Prediction<T>> {
        self.check_experts(prev_first_layer, "prev_first_layer")?;
        let mut first = vec![T::zero(); self.num_experts];
        let share = T::one() / T::from_count(prev_first_layer.len());
        for &e in prev_first_layer {
            first[e] = first[e] + share;
        }
        let mut layers = vec![LayerPrediction::from_scores(first, self.top_k)];
        for l in 1..self.num_layers {
            let next = self.predict_layerwise(&layers[l - 1].top_k, l)?;
            layers.push(next);
        }
        Ok(Prediction { layers })
    }

    /// Predicts every layer of the next prompt from the previous prompt's
    /// per-layer experts.
    pub fn predict_all_layers(&self, prev_prompt: &[Vec<usize>]) -> Result<Prediction<T>> {
        if prev_prompt.len() != self.num_layers {
            return Err(invalid(
                "prev_prompt",
                format!("{} layers given, model has {}", prev_prompt.len(), self.num_layers),
            ));
        }
        let layers = prev_prompt
            .iter()
            .enumerate()
            .map(|(l, experts)| {
                self.check_experts(experts, &format!("prev_prompt[{l}]"))?;
                let scores = self.mean_rows(experts, |e| self.prompt_row(l, e));
                Ok(LayerPrediction::from_scores(scores, self.top_k))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prediction { layers })
    }

    /// Per-layer token-to-expert routing frequencies of `task`. A task never
    /// seen during fitting gets the aggregate over all tasks.
    pub fn predicted_frequencies(&self, task: &TaskId) -> Vec<Vec<T>> {
        let counts = match self.task_counts.get(task) {
            Some(c) => c.clone(),
            None => {
                let mut agg = vec![vec![0u64; self.num_experts]; self.num_layers];
                for c in self.task_counts.values() {
                    for (row, add) in agg.iter_mut().zip(c) {
                        row.iter_mut().zip(add).for_each(|(a, b)| *a += b);
                    }
                }
                agg
            }
        };
        counts.iter().map(|row| smoothed(row, self.smoothing)).collect()
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()>
    where
        T: Serialize,
    {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let model: Self = serde_json::from_reader(input)?;
        let (m, e) = (model.num_layers, model.num_experts);
        let square = |c: &CountMatrix| c.dim == e && c.counts.len() == e * e;
        if m == 0
            || model.layer_models.len() != m - 1
            || model.prompt_models.len() != m
            || !model.layer_models.iter().all(square)
            || !model.prompt_models.iter().all(square)
            || model
                .task_counts
                .values()
                .any(|c| c.len() != m || c.iter().any(|r| r.len() != e))
        {
            return Err(invalid("model", "count arrays do not match the stored dimensions"));
        }
        if !(model.smoothing >= T::zero()) {
            return Err(invalid("model.smoothing", "must be non-negative"));
        }
        Ok(model)
    }
}

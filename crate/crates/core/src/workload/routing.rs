use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_correlation, ModelShape, StochasticMatrix};
use crate::error::{invalid, Result};

/// Gate decisions for one prompt, indexed `[layer][token][rank]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRouting {
    num_layers: usize,
    tokens: usize,
    top_k: usize,
    choices: Vec<usize>,
}

impl PromptRouting {
    /// Builds from nested `[layer][token][rank]` vectors.
    pub fn from_nested(routing: &[Vec<Vec<usize>>], num_experts: usize, top_k: usize) -> Result<Self> {
        let num_layers = routing.len();
        if num_layers == 0 {
            return Err(invalid("routing", "no layers"));
        }
        let tokens = routing[0].len();
        if tokens == 0 {
            return Err(invalid("routing", "no tokens"));
        }
        let mut choices = Vec::with_capacity(num_layers * tokens * top_k);
        for (l, layer) in routing.iter().enumerate() {
            if layer.len() != tokens {
                return Err(invalid(format!("routing[{l}]"), "token count differs between layers"));
            }
            for (t, experts) in layer.iter().enumerate() {
                check_choice(experts, num_experts, top_k)
                    .map_err(|reason| invalid(format!("routing[{l}][{t}]"), reason))?;
                choices.extend_from_slice(experts);
            }
        }
        Ok(Self {
            num_layers,
            tokens,
            top_k,
            choices,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Ranked experts the gate chose for `token` at `layer`.
    pub fn choice(&self, layer: usize, token: usize) -> &[usize] {
        let start = (layer * self.tokens + token) * self.top_k;
        &self.choices[start..start + self.top_k]
    }

    pub fn top1(&self, layer: usize, token: usize) -> usize {
        self.choice(layer, token)[0]
    }

    /// Top-1 experts of every token at `layer`.
    pub fn top1_sequence(&self, layer: usize) -> Vec<usize> {
        (0..self.tokens).map(|t| self.top1(layer, t)).collect()
    }

    /// Up to `n` distinct experts ordered by how many tokens chose them as
    /// top-1 (ties: lower index first).
    pub fn frequent_experts(&self, layer: usize, n: usize) -> Vec<usize> {
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for t in 0..self.tokens {
            let e = self.top1(layer, t);
            match counts.iter_mut().find(|(x, _)| *x == e) {
                Some(c) => c.1 += 1,
                None => counts.push((e, 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        counts.into_iter().take(n).map(|(e, _)| e).collect()
    }

    /// Most frequent top-1 expert at `layer`.
    pub fn dominant(&self, layer: usize) -> usize {
        self.frequent_experts(layer, 1)[0]
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<usize>>> {
        (0..self.num_layers)
            .map(|l| (0..self.tokens).map(|t| self.choice(l, t).to_vec()).collect())
            .collect()
    }
}

fn check_choice(experts: &[usize], num_experts: usize, top_k: usize) -> std::result::Result<(), String> {
    if experts.len() != top_k {
        return Err(format!("expected {top_k} experts, got {}", experts.len()));
    }
    for (i, &e) in experts.iter().enumerate() {
        if e >= num_experts {
            return Err(format!("expert {e} out of range (E = {num_experts})"));
        }
        if experts[..i].contains(&e) {
            return Err(format!("expert {e} repeated"));
        }
    }
    Ok(())
}

/// Ground-truth routing for a sequence of prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTrace {
    pub num_layers: usize,
    pub num_experts: usize,
    pub top_k: usize,
    pub prompts: Vec<PromptRouting>,
}

impl RoutingTrace {
    pub fn new(shape: &ModelShape, prompts: Vec<PromptRouting>) -> Result<Self> {
        let trace = Self {
            num_layers: shape.num_moe_layers,
            num_experts: shape.experts_per_layer,
            top_k: shape.top_k,
            prompts,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        for (n, p) in self.prompts.iter().enumerate() {
            if p.num_layers != self.num_layers || p.top_k != self.top_k {
                return Err(invalid(format!("prompt {n}"), "does not match the model shape"));
            }
            for chunk in p.choices.chunks(self.top_k) {
                check_choice(chunk, self.num_experts, self.top_k).map_err(|r| invalid(format!("prompt {n}"), r))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn conforms_to(&self, shape: &ModelShape) -> bool {
        self.num_layers == shape.num_moe_layers
            && self.num_experts == shape.experts_per_layer
            && self.top_k == shape.top_k
    }
}

/// Transition structure for the synthetic routing generator.
///
/// Each token follows a first-order chain across layers driven by
/// `layer_transition[l]` (layer `l` -> `l + 1`). Every token of a prompt
/// enters layer 0 at the prompt's seed expert; seeds follow a second chain
/// across prompts driven by `prompt_transition`, indexed by the previous
/// prompt's dominant layer-0 expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCalibration {
    pub layer_transition: Vec<StochasticMatrix<f64>>,
    pub prompt_transition: StochasticMatrix<f64>,
    pub target_layer_corr: f64,
    pub target_prompt_corr: f64,
    pub rng_seed: u64,
    /// Seed expert of the first prompt; drawn uniformly when `None`.
    #[serde(default)]
    pub initial_expert: Option<usize>,
}

impl TraceCalibration {
    /// Identity/uniform mixtures with the given stickiness on both chains.
    pub fn from_stickiness(shape: &ModelShape, layer: f64, prompt: f64, rng_seed: u64) -> Self {
        let e = shape.experts_per_layer;
        Self {
            layer_transition: vec![StochasticMatrix::mixture(e, layer); shape.num_moe_layers.saturating_sub(1)],
            prompt_transition: StochasticMatrix::mixture(e, prompt),
            target_layer_corr: layer,
            target_prompt_corr: prompt,
            rng_seed,
            initial_expert: None,
        }
    }

    pub fn validate(&self, shape: &ModelShape) -> Result<()> {
        let e = shape.experts_per_layer;
        if self.layer_transition.len() != shape.num_moe_layers - 1 {
            return Err(invalid(
                "calibration.layer_transition",
                format!(
                    "{} matrices for {} layer pairs",
                    self.layer_transition.len(),
                    shape.num_moe_layers - 1
                ),
            ));
        }
        if let Some(i) = self.layer_transition.iter().position(|m| m.dim() != e) {
            return Err(invalid(
                format!("calibration.layer_transition[{i}]"),
                "dimension is not E",
            ));
        }
        if self.prompt_transition.dim() != e {
            return Err(invalid("calibration.prompt_transition", "dimension is not E"));
        }
        if let Some(s) = self.initial_expert {
            if s >= e {
                return Err(invalid("calibration.initial_expert", "out of range"));
            }
        }
        Ok(())
    }
}

/// Draws from `row` restricted to indices not in `excluded`; falls back to a
/// uniform draw when the remaining mass is zero.
fn sample_excluding<R: Rng>(row: &[f64], excluded: &[usize], rng: &mut R) -> usize {
    let mass: f64 = row
        .iter()
        .enumerate()
        .filter(|(j, _)| !excluded.contains(j))
        .map(|(_, &p)| p)
        .sum();
    if mass <= 0.0 {
        let free: Vec<usize> = (0..row.len()).filter(|j| !excluded.contains(j)).collect();
        return free[rng.random_range(0..free.len())];
    }
    let mut u = rng.random::<f64>() * mass;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if excluded.contains(&j) || p <= 0.0 {
            continue;
        }
        last = j;
        if u < p {
            return j;
        }
        u -= p;
    }
    last
}

fn fill_remaining<R: Rng>(row: &[f64], chosen: &mut Vec<usize>, k: usize, rng: &mut R) {
    while chosen.len() < k {
        let next = sample_excluding(row, chosen, rng);
        chosen.push(next);
    }
}

/// Generates `prompts` prompts of `tokens_per_prompt` tokens each.
pub fn gen_routing_trace(
    shape: &ModelShape,
    calibration: &TraceCalibration,
    prompts: usize,
    tokens_per_prompt: usize,
) -> Result<RoutingTrace> {
    shape.validate()?;
    calibration.validate(shape)?;
    if tokens_per_prompt == 0 {
        return Err(invalid("tokens_per_prompt", "must be at least 1"));
    }
    let (m, e, k) = (shape.num_moe_layers, shape.experts_per_layer, shape.top_k);
    let mut rng = ChaCha8Rng::seed_from_u64(calibration.rng_seed);
    let mut out = Vec::with_capacity(prompts);
    let mut prev_dominant: Option<usize> = None;
    let mut chosen = Vec::with_capacity(k);

    for _ in 0..prompts {
        let seed_row = prev_dominant.map(|d| calibration.prompt_transition.row(d));
        let seed = match (prev_dominant, calibration.initial_expert) {
            (Some(_), _) => sample_excluding(seed_row.unwrap(), &[], &mut rng),
            (None, Some(s)) => s,
            (None, None) => rng.random_range(0..e),
        };
        let uniform = vec![1.0 / e as f64; e];
        let first_row = seed_row.unwrap_or(&uniform);

        let mut choices = vec![0usize; m * tokens_per_prompt * k];
        for t in 0..tokens_per_prompt {
            chosen.clear();
            chosen.push(seed);
            fill_remaining(first_row, &mut chosen, k, &mut rng);
            let at = t * k;
            choices[at..at + k].copy_from_slice(&chosen);
            let mut current = seed;
            for l in 1..m {
                let row = calibration.layer_transition[l - 1].row(current);
                chosen.clear();
                chosen.push(sample_excluding(row, &[], &mut rng));
                fill_remaining(row, &mut chosen, k, &mut rng);
                let at = (l * tokens_per_prompt + t) * k;
                choices[at..at + k].copy_from_slice(&chosen);
                current = chosen[0];
            }
        }
        let prompt = PromptRouting {
            num_layers: m,
            tokens: tokens_per_prompt,
            top_k: k,
            choices,
        };
        prev_dominant = Some(prompt.dominant(0));
        out.push(prompt);
    }
    Ok(RoutingTrace {
        num_layers: m,
        num_experts: e,
        top_k: k,
        prompts: out,
    })
}

/// Mean over adjacent layer pairs of the Pearson correlation between the
/// top-1 sequences (all tokens of all prompts, concatenated).
pub fn measure_layer_correlation(trace: &RoutingTrace) -> Result<f64> {
    if trace.num_layers < 2 {
        return Err(invalid("trace", "need at least two layers"));
    }
    let mut total = 0.0;
    for l in 0..trace.num_layers - 1 {
        let a: Vec<usize> = trace.prompts.iter().flat_map(|p| p.top1_sequence(l)).collect();
        let b: Vec<usize> = trace.prompts.iter().flat_map(|p| p.top1_sequence(l + 1)).collect();
        total += cross_correlation::<f64>(&a, &b)?;
    }
    Ok(total / (trace.num_layers - 1) as f64)
}

/// Pearson correlation between consecutive prompts' dominant experts at `layer`.
pub fn measure_prompt_correlation(trace: &RoutingTrace, layer: usize) -> Result<f64> {
    if layer >= trace.num_layers {
        return Err(invalid("layer", "out of range"));
    }
    let d: Vec<usize> = trace.prompts.iter().map(|p| p.dominant(layer)).collect();
    if d.len() < 3 {
        return Err(invalid("trace", "need at least three prompts"));
    }
    cross_correlation::<f64>(&d[..d.len() - 1], &d[1..])
}

const PROBE_PROMPTS: usize = 1500;
const PROBE_TOKENS: usize = 8;
const BISECTION_STEPS: usize = 30;

fn bisect(target: f64, mut measure: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if measure(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Finds identity/uniform mixtures whose generated traces hit the target
/// layer-to-layer and prompt-to-prompt correlations.
pub fn calibrate(
    shape: &ModelShape,
    target_layer_corr: f64,
    target_prompt_corr: f64,
    rng_seed: u64,
) -> Result<TraceCalibration> {
    shape.validate()?;
    for (key, v) in [
        ("target_layer_corr", target_layer_corr),
        ("target_prompt_corr", target_prompt_corr),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(
                key,
                format!("{v} is not reachable by identity/uniform mixing (need [0, 1])"),
            ));
        }
    }
    let layer = if shape.num_moe_layers < 2 {
        target_layer_corr
    } else {
        bisect(target_layer_corr, |lambda| {
            let cal = TraceCalibration::from_stickiness(shape, lambda, 0.0, rng_seed);
            measure_layer_correlation(&gen_routing_trace(shape, &cal, PROBE_PROMPTS / 4, PROBE_TOKENS * 4)?)
        })?
    };
    let prompt = bisect(target_prompt_corr, |lambda| {
        let cal = TraceCalibration::from_stickiness(shape, layer, lambda, rng_seed);
        measure_prompt_correlation(&gen_routing_trace(shape, &cal, PROBE_PROMPTS * 2, 1)?, 0)
    })?;
    let mut cal = TraceCalibration::from_stickiness(shape, layer, prompt, rng_seed);
    cal.target_layer_corr = target_layer_corr;
    cal.target_prompt_corr = target_prompt_corr;
    Ok(cal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape::new(4, 8, 2, 1, 0).unwrap()
    }

    #[test]
    fn identity_chain_is_absorbing() {
        let s = shape();
        let mut cal = TraceCalibration::from_stickiness(&s, 1.0, 1.0, 11);
        cal.initial_expert = Some(3);
        let trace = gen_routing_trace(&s, &cal, 20, 5).unwrap();
        for p in &trace.prompts {
            for l in 0..4 {
                assert!(p.top1_sequence(l).iter().all(|&e| e == 3));
            }
        }
    }

    #[test]
    fn rejects_mismatched_calibration() {
        let s = shape();
        let mut cal = TraceCalibration::from_stickiness(&s, 0.5, 0.5, 1);
        cal.layer_transition.pop();
        assert!(gen_routing_trace(&s, &cal, 2, 2).is_err());
        let cal = TraceCalibration::from_stickiness(&ModelShape::new(4, 6, 2, 1, 0).unwrap(), 0.5, 0.5, 1);
        assert!(gen_routing_trace(&s, &cal, 2, 2).is_err());
    }

    #[test]
    fn nested_round_trip_and_validation() {
        let nested = vec![vec![vec![0, 1], vec![2, 3]], vec![vec![1, 0], vec![3, 2]]];
        let p = PromptRouting::from_nested(&nested, 4, 2).unwrap();
        assert_eq!(p.to_nested(), nested);
        assert_eq!(p.choice(1, 1), &[3, 2]);
        assert!(PromptRouting::from_nested(&[vec![vec![0, 0]]], 4, 2).is_err());
        assert!(PromptRouting::from_nested(&[vec![vec![0, 4]]], 4, 2).is_err());
    }

    #[test]
    fn frequent_experts_tie_break() {
        let nested = vec![vec![vec![2], vec![1], vec![2], vec![1], vec![0]]];
        let p = PromptRouting::from_nested(&nested, 4, 1).unwrap();
        assert_eq!(p.frequent_experts(0, 3), vec![1, 2, 0]);
        assert_eq!(p.dominant(0), 1);
    }

    #[test]
    fn calibration_hits_targets() {
        let s = shape();
        let cal = calibrate(&s, 0.5, 0.8, 5).unwrap();
        let trace = gen_routing_trace(&s, &cal, 800, 16).unwrap();
        let lc = measure_layer_correlation(&trace).unwrap();
        assert!((lc - 0.5).abs() < 0.05, "layer corr {lc}");
        let pc = measure_prompt_correlation(&trace, 0).unwrap();
        assert!((pc - 0.8).abs() < 0.06, "prompt corr {pc}");
        assert!(calibrate(&s, -0.2, 0.5, 1).is_err());
    }
}

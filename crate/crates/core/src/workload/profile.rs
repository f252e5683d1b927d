use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::ModelShape;
use crate::error::{invalid, Result};

/// 0.9 quantile of the standard normal.
const Z90: f64 = 1.2815515655446004;

/// Task type label, e.g. `SUM` or `QA`. Ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Token-count distribution of a task.
///
/// `LogNormal` is parameterized by its mean and 90th percentile, which is how
/// per-task length CDFs are usually summarized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OutputLengthDist {
    LogNormal { mean: f64, p90: f64 },
    Constant { value: f64 },
}

impl OutputLengthDist {
    pub fn validate(&self, key: &str) -> Result<()> {
        match *self {
            Self::Constant { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(invalid(key, "constant length must be positive"));
                }
            }
            Self::LogNormal { mean, p90 } => {
                if !(mean > 0.0 && mean.is_finite()) {
                    return Err(invalid(key, "mean must be positive"));
                }
                if !(p90 > mean) {
                    return Err(invalid(key, "p90 must exceed the mean"));
                }
                if (p90 / mean).ln() > Z90 * Z90 / 2.0 {
                    return Err(invalid(
                        key,
                        format!("p90/mean ratio {:.3} is too heavy-tailed for a log-normal", p90 / mean),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::LogNormal { mean, .. } => mean,
        }
    }

    /// Underlying normal's `(mu, sigma)`. Takes the smaller root, the one
    /// where the p90 lies above the mean.
    pub fn log_normal_params(mean: f64, p90: f64) -> (f64, f64) {
        let gap = (p90 / mean).ln();
        let sigma = Z90 - (Z90 * Z90 - 2.0 * gap).max(0.0).sqrt();
        let mu = mean.ln() - sigma * sigma / 2.0;
        (mu, sigma)
    }

    /// Draws a length in whole tokens, at least 1 and at most `cap`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, cap: usize) -> usize {
        let raw = match *self {
            Self::Constant { value } => value,
            Self::LogNormal { mean, p90 } => {
                let (mu, sigma) = Self::log_normal_params(mean, p90);
                LogNormal::new(mu, sigma).expect("validated").sample(rng)
            }
        };
        (raw.round() as usize).clamp(1, cap.max(1))
    }
}

/// Offline profile of one task type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub task_id: TaskId,
    pub name: String,
    /// Lowercase keywords used by [`super::extract_task_type`].
    pub keywords: Vec<String>,
    pub input_length_dist: OutputLengthDist,
    pub output_length_dist: OutputLengthDist,
    /// Expected generated tokens per request.
    pub expected_output_tokens: f64,
    /// Time-to-first-token target, seconds.
    pub slo_ttft: f64,
    /// Per MoE layer: `true` if routing accuracy at that layer matters to the task.
    pub sensitivity: Vec<bool>,
    /// Optional per-layer routing frequency prior (rows sum to 1). When absent
    /// the fitted predictor supplies it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing_prior: Option<Vec<Vec<f64>>>,
}

impl TaskProfile {
    pub fn validate(&self, shape: &ModelShape) -> Result<()> {
        let key = |f: &str| format!("task.{}.{f}", self.task_id);
        if self.keywords.is_empty() {
            return Err(invalid(key("keywords"), "must not be empty"));
        }
        if let Some(k) = self.keywords.iter().find(|k| k.to_lowercase() != **k || k.is_empty()) {
            return Err(invalid(
                key("keywords"),
                format!("keyword {k:?} must be non-empty lowercase"),
            ));
        }
        self.input_length_dist.validate(&key("input_length_dist"))?;
        self.output_length_dist.validate(&key("output_length_dist"))?;
        if !(self.expected_output_tokens > 0.0 && self.expected_output_tokens.is_finite()) {
            return Err(invalid(key("expected_output_tokens"), "must be positive"));
        }
        if !(self.slo_ttft > 0.0) {
            return Err(invalid(key("slo_ttft"), "must be positive"));
        }
        if self.sensitivity.len() != shape.num_moe_layers {
            return Err(invalid(
                key("sensitivity"),
                format!(
                    "has {} layers, model has {}",
                    self.sensitivity.len(),
                    shape.num_moe_layers
                ),
            ));
        }
        if let Some(prior) = &self.routing_prior {
            if prior.len() != shape.num_moe_layers {
                return Err(invalid(key("routing_prior"), "one row per MoE layer required"));
            }
            for (l, row) in prior.iter().enumerate() {
                let s: f64 = row.iter().sum();
                if row.len() != shape.experts_per_layer || row.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > 1e-9 {
                    return Err(invalid(
                        format!("{}[{l}]", key("routing_prior")),
                        "must be a length-E probability vector",
                    ));
                }
            }
        }
        Ok(())
    }

    /// The five task types used throughout the experiments: summarization,
    /// sentiment classification, question answering, similarity comparison
    /// and conversation. Lengths are in tokens, SLOs in seconds.
    pub fn defaults(shape: &ModelShape, threshold: f64) -> Vec<TaskProfile> {
        let m = shape.num_moe_layers;
        let lognormal = |mean, p90| OutputLengthDist::LogNormal { mean, p90 };
        let mk = |id: &str,
                  name: &str,
                  keywords: &[&str],
                  input: OutputLengthDist,
                  output: OutputLengthDist,
                  slo: f64,
                  curve: &[(f64, f64)]| TaskProfile {
            task_id: TaskId::from(id),
            name: name.to_owned(),
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
            expected_output_tokens: output.mean(),
            input_length_dist: input,
            output_length_dist: output,
            slo_ttft: slo,
            sensitivity: sensitivity_from_accuracy_curve(curve, m, threshold).expect("built-in curves are valid"),
            routing_prior: None,
        };
        vec![
            mk(
                "CLSFY",
                "sentiment classification",
                &[
                    "classify",
                    "sentiment",
                    "positive",
                    "negative",
                    "neutral",
                    "label",
                    "category",
                ],
                lognormal(60.0, 100.0),
                lognormal(130.0, 230.0),
                12.0,
                &[(0.0, 0.92), (1.0, 1.0)],
            ),
            mk(
                "COMP",
                "semantic similarity",
                &["compare", "similar", "similarity", "same", "headlines", "related"],
                lognormal(50.0, 80.0),
                lognormal(120.0, 210.0),
                12.0,
                &[(0.0, 0.91), (1.0, 1.0)],
            ),
            mk(
                "CONV",
                "conversation",
                &["chat", "hello", "hi", "conversation", "assistant", "help", "talk"],
                lognormal(120.0, 250.0),
                lognormal(200.0, 330.0),
                8.0,
                &[(0.0, 0.40), (0.5, 0.65), (0.75, 0.78), (1.0, 1.0)],
            ),
            mk(
                "QA",
                "question answering",
                &["question", "answer", "what", "who", "when", "where", "which", "context"],
                lognormal(250.0, 400.0),
                lognormal(115.0, 255.0),
                6.0,
                &[(0.0, 0.60), (0.5, 0.86), (0.75, 0.93), (1.0, 1.0)],
            ),
            mk(
                "SUM",
                "summarization",
                &["summarize", "summary", "synopsis", "summarise", "tl;dr", "article"],
                lognormal(400.0, 700.0),
                lognormal(150.0, 260.0),
                10.0,
                &[(0.0, 0.45), (0.5, 0.72), (0.75, 0.79), (1.0, 1.0)],
            ),
        ]
    }
}

/// Derives the per-layer sensitivity vector from an accuracy curve.
///
/// `curve` holds `(fraction of MoE layers routed accurately, accuracy)` points
/// from a progressive experiment that randomizes routing starting at the
/// layer closest to the input. Layer `l` is insensitive when randomizing
/// layers `0..=l` still leaves accuracy strictly above `threshold`.
pub fn sensitivity_from_accuracy_curve(curve: &[(f64, f64)], num_layers: usize, threshold: f64) -> Result<Vec<bool>> {
    if curve.is_empty() {
        return Err(invalid("accuracy_curve", "needs at least one point"));
    }
    if curve.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(invalid("accuracy_curve", "fractions must be strictly increasing"));
    }
    if curve.iter().any(|&(f, _)| !(0.0..=1.0).contains(&f)) {
        return Err(invalid("accuracy_curve", "fractions must lie in [0, 1]"));
    }
    let accuracy_at = |x: f64| -> f64 {
        if x <= curve[0].0 {
            return curve[0].1;
        }
        for w in curve.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        curve[curve.len() - 1].1
    };
    Ok((0..num_layers)
        .map(|l| {
            let accurate = (num_layers - l - 1) as f64 / num_layers as f64;
            accuracy_at(accurate) <= threshold
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lognormal_matches_mean_and_p90() {
        let (mu, sigma) = OutputLengthDist::log_normal_params(200.0, 330.0);
        let mean = (mu + sigma * sigma / 2.0).exp();
        let p90 = (mu + Z90 * sigma).exp();
        assert!((mean - 200.0).abs() < 1e-9);
        assert!((p90 - 330.0).abs() < 1e-9);
    }

    #[test]
    fn lognormal_sample_mean_is_close() {
        let d = OutputLengthDist::LogNormal {
            mean: 150.0,
            p90: 260.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let total: usize = (0..n).map(|_| d.sample(&mut rng, 100_000)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 150.0).abs() < 3.0, "sample mean {mean}");
    }

    #[test]
    fn rejects_infeasible_tail() {
        let d = OutputLengthDist::LogNormal { mean: 10.0, p90: 40.0 };
        assert!(d.validate("x").is_err());
        let d = OutputLengthDist::LogNormal { mean: 10.0, p90: 9.0 };
        assert!(d.validate("x").is_err());
    }

    #[test]
    fn sensitivity_prefix_from_curve() {
        let qa = [(0.0, 0.60), (0.5, 0.86), (0.75, 0.93), (1.0, 1.0)];
        assert_eq!(
            sensitivity_from_accuracy_curve(&qa, 4, 0.85).unwrap(),
            vec![false, false, true, true]
        );
        let tolerant = [(0.0, 0.92), (1.0, 1.0)];
        assert_eq!(
            sensitivity_from_accuracy_curve(&tolerant, 4, 0.85).unwrap(),
            vec![false; 4]
        );
        let fragile = [(0.0, 0.4), (0.75, 0.78), (1.0, 1.0)];
        assert_eq!(
            sensitivity_from_accuracy_curve(&fragile, 4, 0.85).unwrap(),
            vec![true; 4]
        );
        assert!(sensitivity_from_accuracy_curve(&[(0.5, 1.0), (0.5, 0.9)], 4, 0.85).is_err());
    }

    #[test]
    fn default_profiles_validate() {
        let shape = ModelShape::new(4, 8, 2, 1, 0).unwrap();
        let profiles = TaskProfile::defaults(&shape, 0.85);
        assert_eq!(profiles.len(), 5);
        for p in &profiles {
            p.validate(&shape).unwrap();
        }
        let insensitive = profiles.iter().filter(|p| p.sensitivity.iter().any(|s| !s)).count();
        assert!(insensitive >= 2);
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::workload::ModelShape;

pub const DEFAULT_INVOCATION_PERIOD: usize = 40;
pub const DEFAULT_FREQUENCY_PRIOR_WEIGHT: f64 = 0.1;

/// Expert management policy under simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every expert resident.
    Baseline,
    /// Each iteration pulls in the experts it needs, on the critical path.
    Dynamic,
    /// Periodic uniformly random expert sets.
    Random,
    /// Periodic all-layer prediction from the previous prompt.
    EmoeA,
    /// Periodic layer-by-layer prediction.
    EmoeL,
    /// All-layer prediction before every prompt.
    EmoeE,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Baseline,
        Mode::Dynamic,
        Mode::Random,
        Mode::EmoeA,
        Mode::EmoeL,
        Mode::EmoeE,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Dynamic => "dynamic",
            Mode::Random => "random",
            Mode::EmoeA => "emoe_a",
            Mode::EmoeL => "emoe_l",
            Mode::EmoeE => "emoe_e",
        }
    }

    /// Modes that run the transition-model predictor.
    pub fn predicts(self) -> bool {
        matches!(self, Mode::EmoeA | Mode::EmoeL | Mode::EmoeE)
    }

    /// Modes that replace the placement periodically under a budget.
    pub fn is_periodic(self) -> bool {
        self.predicts() || self == Mode::Random
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid("mode", format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub mode: Mode,
    /// Prompts between predictor calls.
    #[serde(default = "default_period")]
    pub invocation_period: usize,
    /// Resident experts allowed per layer.
    pub budgets: Vec<usize>,
    /// Bound on the input tokens of admitted, unfinished requests.
    pub token_budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Zero the expected load of layers a task is insensitive to.
    #[serde(default = "default_true")]
    pub task_aware: bool,
    /// Weight of the per-task routing prior against the predictor output
    /// when estimating routing frequencies.
    #[serde(default = "default_prior_weight")]
    pub frequency_prior_weight: f64,
}

fn default_period() -> usize {
    DEFAULT_INVOCATION_PERIOD
}

fn default_true() -> bool {
    true
}

fn default_prior_weight() -> f64 {
    DEFAULT_FREQUENCY_PRIOR_WEIGHT
}

impl EngineConfig {
    pub fn new(mode: Mode, budgets: Vec<usize>, token_budget: usize) -> Self {
        Self {
            mode,
            invocation_period: DEFAULT_INVOCATION_PERIOD,
            budgets,
            token_budget,
            seed: 0,
            task_aware: true,
            frequency_prior_weight: DEFAULT_FREQUENCY_PRIOR_WEIGHT,
        }
    }

    pub fn validate(&self, shape: &ModelShape) -> Result<()> {
        if self.invocation_period == 0 {
            return Err(invalid("engine.invocation_period", "must be at least 1"));
        }
        if self.token_budget == 0 {
            return Err(invalid("engine.token_budget", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.frequency_prior_weight) {
            return Err(invalid("engine.frequency_prior_weight", "must lie in [0, 1]"));
        }
        if self.mode.is_periodic() {
            if self.budgets.len() != shape.num_moe_layers {
                return Err(invalid(
                    "engine.budgets",
                    format!("{} budgets for {} MoE layers", self.budgets.len(), shape.num_moe_layers),
                ));
            }
            if let Some(l) = self.budgets.iter().position(|&b| b == 0 || b > shape.experts_per_layer) {
                return Err(invalid(
                    format!("engine.budgets[{l}]"),
                    format!("must lie in 1..={}", shape.experts_per_layer),
                ));
            }
        }
        Ok(())
    }

    /// Whether the `index`-th admitted prompt triggers a predictor call.
    pub fn invokes_at(&self, index: usize) -> bool {
        match self.mode {
            Mode::EmoeE => true,
            m if m.is_periodic() => index.is_multiple_of(self.invocation_period),
            _ => false,
        }
    }
}

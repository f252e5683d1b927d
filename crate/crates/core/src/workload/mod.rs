//! Synthetic workloads: request arrivals, expert-routing traces and task
//! classification.

mod correlation;
mod matrix;
mod profile;
mod request;
mod routing;
mod task_type;
pub mod trace_io;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use correlation::cross_correlation;
pub use matrix::StochasticMatrix;
pub use profile::{sensitivity_from_accuracy_curve, OutputLengthDist, TaskId, TaskProfile};
pub use request::{gen_request_trace, Request, RequestState};
pub use routing::{
    calibrate, gen_routing_trace, measure_layer_correlation, measure_prompt_correlation, PromptRouting, RoutingTrace,
    TraceCalibration,
};
pub use task_type::extract_task_type;

/// Static geometry of an MoE model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_moe_layers: usize,
    pub experts_per_layer: usize,
    pub top_k: usize,
    /// Bytes of one expert's weights.
    pub expert_bytes: u64,
    /// Bytes of everything that is not an expert (attention, embeddings, gates).
    pub base_bytes: u64,
}

impl ModelShape {
    pub fn new(
        num_moe_layers: usize,
        experts_per_layer: usize,
        top_k: usize,
        expert_bytes: u64,
        base_bytes: u64,
    ) -> Result<Self> {
        let shape = Self {
            num_moe_layers,
            experts_per_layer,
            top_k,
            expert_bytes,
            base_bytes,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_moe_layers == 0 {
            return Err(invalid("num_moe_layers", "must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(invalid("top_k", "must be at least 1"));
        }
        if self.experts_per_layer < self.top_k {
            return Err(invalid(
                "experts_per_layer",
                format!("{} is smaller than top_k {}", self.experts_per_layer, self.top_k),
            ));
        }
        if self.expert_bytes == 0 {
            return Err(invalid("expert_bytes", "must be positive"));
        }
        Ok(())
    }

    /// Total number of experts across all MoE layers.
    pub fn total_experts(&self) -> usize {
        self.num_moe_layers * self.experts_per_layer
    }

    /// Device bytes with every expert resident.
    pub fn full_model_bytes(&self) -> u64 {
        self.base_bytes + self.total_experts() as u64 * self.expert_bytes
    }

    /// Mixtral-8x7B-like geometry, fp16 weights.
    pub fn mixtral_8x7b() -> Self {
        Self {
            num_moe_layers: 32,
            experts_per_layer: 8,
            top_k: 2,
            expert_bytes: 3 * 4096 * 14336 * 2,
            base_bytes: 3_200_000_000,
        }
    }

    /// OpenMoE-like geometry (4 MoE layers), fp16 weights.
    pub fn openmoe() -> Self {
        Self {
            num_moe_layers: 4,
            experts_per_layer: 32,
            top_k: 2,
            expert_bytes: 3 * 2048 * 8192 * 2,
            base_bytes: 13_000_000_000,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rejects_bad_geometry() {
        assert!(ModelShape::new(0, 8, 2, 1, 0).is_err());
        assert!(ModelShape::new(4, 1, 2, 1, 0).is_err());
        assert!(ModelShape::new(4, 8, 0, 1, 0).is_err());
        assert!(ModelShape::new(4, 8, 2, 0, 0).is_err());
        let s = ModelShape::new(4, 8, 2, 10, 100).unwrap();
        assert_eq!(s.full_model_bytes(), 100 + 32 * 10);
    }

    #[test]
    fn presets_are_valid() {
        ModelShape::mixtral_8x7b().validate().unwrap();
        ModelShape::openmoe().validate().unwrap();
    }
}

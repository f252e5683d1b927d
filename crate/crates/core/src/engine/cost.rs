use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::workload::ModelShape;

/// Full host-to-device expert transfer time measured for OpenMoE, seconds.
pub const OPENMOE_FULL_TRANSFER_SECS: f64 = 4.431;
/// Same for Mixtral-8x7B.
pub const MIXTRAL_FULL_TRANSFER_SECS: f64 = 12.744;

/// Timing constants of the simulated server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Seconds of compute per processed token.
    pub per_token_cost: f64,
    /// Fixed setup latency of one expert transfer, seconds.
    pub per_expert_transfer: f64,
    /// Host-to-device bandwidth, bytes per second.
    pub hd_bandwidth: f64,
    /// Seconds one all-layer predictor call occupies.
    pub predictor_invocation_cost: f64,
    /// Seconds one layer-by-layer predictor call occupies; defaults to
    /// `predictor_invocation_cost`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor_cost_layerwise: Option<f64>,
    /// Slowdown of compute while a transfer or predictor call overlaps it.
    pub contention_factor: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cost.per_token_cost", self.per_token_cost),
            ("cost.hd_bandwidth", self.hd_bandwidth),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be positive"));
            }
        }
        let non_negative = [
            ("cost.per_expert_transfer", self.per_expert_transfer),
            ("cost.predictor_invocation_cost", self.predictor_invocation_cost),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be non-negative"));
            }
        }
        if let Some(v) = self.predictor_cost_layerwise {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("cost.predictor_cost_layerwise", "must be non-negative"));
            }
        }
        if !(self.contention_factor >= 1.0) {
            return Err(invalid("cost.contention_factor", "must be at least 1"));
        }
        Ok(())
    }

    /// Seconds to move one expert of `expert_bytes` to the device.
    pub fn transfer_time(&self, expert_bytes: u64) -> f64 {
        self.per_expert_transfer + expert_bytes as f64 / self.hd_bandwidth
    }

    pub fn predictor_cost(&self, layerwise: bool) -> f64 {
        match (layerwise, self.predictor_cost_layerwise) {
            (true, Some(v)) => v,
            _ => self.predictor_invocation_cost,
        }
    }

    /// Picks the bandwidth so that moving every expert of `shape` takes
    /// `full_transfer_secs`, given a fixed `setup` latency per transfer.
    pub fn calibrated(
        shape: &ModelShape,
        full_transfer_secs: f64,
        setup: f64,
        per_token_cost: f64,
        predictor_invocation_cost: f64,
        contention_factor: f64,
    ) -> Result<Self> {
        shape.validate()?;
        let per_expert = full_transfer_secs / shape.total_experts() as f64;
        if !(per_expert > setup) {
            return Err(invalid(
                "cost.per_expert_transfer",
                "setup latency leaves no time for the payload",
            ));
        }
        let cost = Self {
            per_token_cost,
            per_expert_transfer: setup,
            hd_bandwidth: shape.expert_bytes as f64 / (per_expert - setup),
            predictor_invocation_cost,
            predictor_cost_layerwise: None,
            contention_factor,
        };
        cost.validate()?;
        Ok(cost)
    }

    /// OpenMoE-like constants: full transfer 4.431 s, predictor calls of
    /// 0.381 s (all layers) and 1.387 s (layer by layer).
    pub fn openmoe(shape: &ModelShape) -> Result<Self> {
        let mut c = Self::calibrated(shape, OPENMOE_FULL_TRANSFER_SECS, 1e-4, 0.002, 0.381, 1.1)?;
        c.predictor_cost_layerwise = Some(1.387);
        Ok(c)
    }

    /// Mixtral-like constants: full transfer 12.744 s, predictor calls of
    /// 0.334 s and 4.211 s.
    pub fn mixtral(shape: &ModelShape) -> Result<Self> {
        let mut c = Self::calibrated(shape, MIXTRAL_FULL_TRANSFER_SECS, 1e-4, 0.004, 0.334, 1.1)?;
        c.predictor_cost_layerwise = Some(4.211);
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_reproduces_full_transfer() {
        let shape = ModelShape::mixtral_8x7b();
        let cost = CostModel::mixtral(&shape).unwrap();
        let full = cost.transfer_time(shape.expert_bytes) * shape.total_experts() as f64;
        assert!((full - MIXTRAL_FULL_TRANSFER_SECS).abs() < 1e-9);
        let shape = ModelShape::openmoe();
        let cost = CostModel::openmoe(&shape).unwrap();
        let full = cost.transfer_time(shape.expert_bytes) * shape.total_experts() as f64;
        assert!((full - OPENMOE_FULL_TRANSFER_SECS).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_constants() {
        let shape = ModelShape::openmoe();
        let mut cost = CostModel::openmoe(&shape).unwrap();
        cost.contention_factor = 0.9;
        assert!(cost.validate().is_err());
        assert!(CostModel::calibrated(&shape, 0.001, 1.0, 0.001, 0.0, 1.0).is_err());
    }
}

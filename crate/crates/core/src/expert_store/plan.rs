use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::engine::CostModel;
use crate::error::{invalid, Result};

use super::Placement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferOp {
    Load(usize),
    Evict(usize),
}

/// Transfers for one layer. Loads appear in priority order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: usize,
    pub ops: Vec<TransferOp>,
}

impl LayerPlan {
    pub fn loads(&self) -> impl Iterator<Item = usize> + '_ {
        self.ops.iter().filter_map(|op| match *op {
            TransferOp::Load(e) => Some(e),
            TransferOp::Evict(_) => None,
        })
    }

    pub fn num_loads(&self) -> usize {
        self.loads().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingPlan {
    pub layers: Vec<LayerPlan>,
    /// Seconds to perform every load, transfers serialized.
    pub estimated_latency: f64,
}

impl LoadingPlan {
    pub fn num_loads(&self) -> usize {
        self.layers.iter().map(LayerPlan::num_loads).sum()
    }
}

/// Transfers turning `current` into `target`.
///
/// `target[l]` lists the wanted experts of layer `l`, highest priority first;
/// loads keep that order. Residents outside the target are evicted.
pub fn plan_loading(current: &Placement, target: &[Vec<usize>], cost: &CostModel) -> Result<LoadingPlan> {
    if target.len() != current.num_layers() {
        return Err(invalid("target", "one expert list per MoE layer required"));
    }
    let per_load = cost.transfer_time(current.expert_bytes());
    let mut layers = Vec::with_capacity(target.len());
    let mut loads = 0usize;
    for (l, wanted) in target.iter().enumerate() {
        let set: BTreeSet<usize> = wanted.iter().copied().collect();
        if set.len() != wanted.len() {
            return Err(invalid(format!("target[{l}]"), "duplicate expert"));
        }
        if set.len() > current.budgets()[l] {
            return Err(invalid(format!("target[{l}]"), "exceeds the layer budget"));
        }
        if let Some(&e) = set.iter().find(|&&e| e >= current.num_experts()) {
            return Err(invalid(format!("target[{l}]"), format!("expert {e} out of range")));
        }
        let resident = current.resident(l);
        let mut ops: Vec<TransferOp> = resident.difference(&set).map(|&e| TransferOp::Evict(e)).collect();
        for &e in wanted {
            if !resident.contains(&e) {
                ops.push(TransferOp::Load(e));
                loads += 1;
            }
        }
        layers.push(LayerPlan { layer: l, ops });
    }
    Ok(LoadingPlan {
        layers,
        estimated_latency: loads as f64 * per_load,
    })
}

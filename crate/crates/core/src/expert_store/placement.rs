use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{LayerPlan, LoadingPlan, TransferOp};
use crate::error::{invalid, Result};
use crate::workload::ModelShape;

/// Per-layer expert budget `round(fraction * E)`, at least one expert.
pub fn budgets_from_fraction(shape: &ModelShape, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid("budget_fraction", format!("{fraction} is outside (0, 1]")));
    }
    let e = shape.experts_per_layer;
    let l = ((fraction * e as f64).round() as usize).clamp(1, e);
    Ok(vec![l; shape.num_moe_layers])
}

/// Device-resident experts per layer and the resulting memory use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    resident: Vec<BTreeSet<usize>>,
    budget_per_layer: Vec<usize>,
    num_experts: usize,
    expert_bytes: u64,
    base_bytes: u64,
    device_bytes_used: u64,
}

impl Placement {
    /// Every expert resident; budgets equal to E.
    pub fn full(shape: &ModelShape) -> Self {
        let all: BTreeSet<usize> = (0..shape.experts_per_layer).collect();
        let mut p = Self {
            resident: vec![all; shape.num_moe_layers],
            budget_per_layer: vec![shape.experts_per_layer; shape.num_moe_layers],
            num_experts: shape.experts_per_layer,
            expert_bytes: shape.expert_bytes,
            base_bytes: shape.base_bytes,
            device_bytes_used: 0,
        };
        p.recount();
        p
    }

    /// No experts resident.
    pub fn empty(shape: &ModelShape, budgets: Vec<usize>) -> Result<Self> {
        let mut p = Self::full(shape);
        p.resident.iter_mut().for_each(BTreeSet::clear);
        p.set_budgets(budgets)?;
        p.recount();
        Ok(p)
    }

    /// Changes the budgets. Layers already above their new budget stay as
    /// they are until the next plan shrinks them.
    pub fn set_budgets(&mut self, budgets: Vec<usize>) -> Result<()> {
        if budgets.len() != self.resident.len() {
            return Err(invalid("budgets", "one budget per MoE layer required"));
        }
        if let Some(l) = budgets.iter().position(|&b| b > self.num_experts) {
            return Err(invalid(format!("budgets[{l}]"), "exceeds experts per layer"));
        }
        self.budget_per_layer = budgets;
        Ok(())
    }

    fn recount(&mut self) {
        let experts: u64 = self.resident.iter().map(|s| s.len() as u64).sum();
        self.device_bytes_used = self.base_bytes + experts * self.expert_bytes;
    }

    pub fn num_layers(&self) -> usize {
        self.resident.len()
    }

    pub fn num_experts(&self) -> usize {
        self.num_experts
    }

    pub fn resident(&self, layer: usize) -> &BTreeSet<usize> {
        &self.resident[layer]
    }

    pub fn is_resident(&self, layer: usize, expert: usize) -> bool {
        self.resident[layer].contains(&expert)
    }

    pub fn budgets(&self) -> &[usize] {
        &self.budget_per_layer
    }

    pub fn device_bytes_used(&self) -> u64 {
        self.device_bytes_used
    }

    /// Bytes taken by resident experts only.
    pub fn expert_bytes_used(&self) -> u64 {
        self.device_bytes_used - self.base_bytes
    }

    pub fn expert_bytes(&self) -> u64 {
        self.expert_bytes
    }

    /// Applies one layer of a plan: evictions first, then loads.
    pub fn apply_layer(&mut self, plan: &LayerPlan) -> Result<()> {
        let l = plan.layer;
        if l >= self.resident.len() {
            return Err(invalid("plan.layer", format!("{l} out of range")));
        }
        let mut next = self.resident[l].clone();
        for op in &plan.ops {
            if let TransferOp::Evict(e) = *op {
                if !next.remove(&e) {
                    return Err(invalid(format!("plan[{l}]"), format!("evicts non-resident expert {e}")));
                }
            }
        }
        for op in &plan.ops {
            if let TransferOp::Load(e) = *op {
                if e >= self.num_experts || !next.insert(e) {
                    return Err(invalid(
                        format!("plan[{l}]"),
                        format!("loads invalid or resident expert {e}"),
                    ));
                }
                if next.len() > self.budget_per_layer[l] {
                    return Err(invalid(format!("plan[{l}]"), "exceeds the layer budget"));
                }
            }
        }
        self.resident[l] = next;
        self.recount();
        Ok(())
    }

    pub fn apply(&mut self, plan: &LoadingPlan) -> Result<()> {
        for layer in &plan.layers {
            self.apply_layer(layer)?;
        }
        Ok(())
    }

    /// Replaces a layer's resident set without a plan (on-demand loading).
    pub fn replace_layer(&mut self, layer: usize, experts: BTreeSet<usize>) -> Result<()> {
        if experts.iter().any(|&e| e >= self.num_experts) {
            return Err(invalid("experts", "out of range"));
        }
        self.resident[layer] = experts;
        self.recount();
        Ok(())
    }

    pub fn snapshot(&self, time: f64, layer: usize) -> PlacementSnapshot {
        PlacementSnapshot {
            time,
            layer,
            resident: self.resident[layer].iter().copied().collect(),
            bytes: self.device_bytes_used,
        }
    }
}

/// One placement change, as written to the snapshot log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSnapshot {
    pub time: f64,
    pub layer: usize,
    pub resident: Vec<usize>,
    /// Device bytes in use after the change.
    pub bytes: u64,
}

/// Writes snapshots as newline-delimited JSON.
pub fn write_snapshots<W: Write>(mut out: W, snapshots: &[PlacementSnapshot]) -> Result<()> {
    for s in snapshots {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape::new(2, 10, 2, 7, 100).unwrap()
    }

    #[test]
    fn fraction_budgets() {
        assert_eq!(budgets_from_fraction(&shape(), 0.6).unwrap(), vec![6, 6]);
        assert_eq!(budgets_from_fraction(&shape(), 0.01).unwrap(), vec![1, 1]);
        assert!(budgets_from_fraction(&shape(), 0.0).is_err());
        assert!(budgets_from_fraction(&shape(), 1.5).is_err());
    }

    #[test]
    fn accounting_is_exact() {
        let mut p = Placement::full(&shape());
        assert_eq!(p.device_bytes_used(), 100 + 20 * 7);
        p.set_budgets(vec![3, 10]).unwrap();
        let plan = LayerPlan {
            layer: 0,
            ops: (3..10).map(TransferOp::Evict).collect(),
        };
        p.apply_layer(&plan).unwrap();
        assert_eq!(p.device_bytes_used(), 100 + 13 * 7);
        assert_eq!(p.expert_bytes_used(), 13 * 7);
    }

    #[test]
    fn rejects_over_budget_and_bogus_ops() {
        let mut p = Placement::empty(&shape(), vec![1, 1]).unwrap();
        let two = LayerPlan {
            layer: 0,
            ops: vec![TransferOp::Load(0), TransferOp::Load(1)],
        };
        assert!(p.apply_layer(&two).is_err());
        let evict = LayerPlan {
            layer: 1,
            ops: vec![TransferOp::Evict(4)],
        };
        assert!(p.apply_layer(&evict).is_err());
        assert_eq!(p.device_bytes_used(), 100);
    }

    #[test]
    fn snapshot_lines() {
        let p = Placement::full(&shape());
        let mut buf = Vec::new();
        write_snapshots(&mut buf, &[p.snapshot(1.5, 1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("{\"time\":1.5,\"layer\":1,\"resident\":[0,1,2"));
        assert!(text.trim_end().ends_with("\"bytes\":240}"));
    }
}

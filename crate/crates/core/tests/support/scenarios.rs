use moesim_core::engine::{synthetic_scenario, CostModel, EngineConfig, Mode, Scenario, WorkloadSpec};
use moesim_core::expert_store::budgets_from_fraction;
use moesim_core::workload::{ModelShape, TaskProfile, TraceCalibration};

/// Four MoE layers of ten experts, default tasks, OpenMoE-like costs.
pub fn small(mode: Mode, phi: f64, requests: usize, seed: u64) -> Scenario {
    let shape = ModelShape::new(4, 10, 2, 1 << 24, 1 << 30).unwrap();
    let profiles = TaskProfile::defaults(&shape, 0.85);
    let cal = TraceCalibration::from_stickiness(&shape, 0.85, 0.95, seed);
    let workload = WorkloadSpec {
        arrival_rate: 2.0,
        duration: 1e6,
        max_requests: Some(requests),
        task_mix: vec![0.2; 5],
        trace_prompts: requests.max(1),
        tokens_per_prompt: 16,
        training_prompts: 1000,
        smoothing: 0.01,
    };
    let config = EngineConfig::new(mode, budgets_from_fraction(&shape, phi).unwrap(), 2048);
    let cost = CostModel::openmoe(&shape).unwrap();
    synthetic_scenario(&shape, &profiles, &cal, &workload, config, cost, seed).unwrap()
}

mod support;

use moesim_core::engine::{run, write_events_csv, EventKind, Mode};
use moesim_core::expert_store::budgets_from_fraction;
use support::scenarios::small;

fn events_csv(out: &moesim_core::engine::RunOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    write_events_csv(&mut buf, &out.events).unwrap();
    buf
}

#[test]
fn baseline_hits_everything_at_constant_memory() {
    let sc = small(Mode::Baseline, 1.0, 60, 1);
    let full = sc.shape.full_model_bytes();
    let out = run(&sc).unwrap();
    assert_eq!(out.metrics.summary.hit_rate, 1.0);
    assert!(out.metrics.memory_timeline.iter().all(|&(_, b)| b == full));
    assert_eq!(out.metrics.summary.completed + out.metrics.summary.dropped, 60);
}

#[test]
fn full_budget_matches_baseline() {
    let base = run(&small(Mode::Baseline, 1.0, 60, 2)).unwrap();
    let emoe = run(&small(Mode::EmoeA, 1.0, 60, 2)).unwrap();
    assert_eq!(emoe.metrics.summary.hit_rate, 1.0);
    assert_eq!(emoe.metrics.requests, base.metrics.requests);
    assert!(emoe.metrics.summary.predictor_invocations > 0);
}

#[test]
fn virtual_time_and_layer_order() {
    let out = run(&small(Mode::EmoeA, 0.4, 120, 3)).unwrap();
    assert!(out.events.windows(2).all(|w| w[0].time <= w[1].time));
    let mut last_complete = f64::NEG_INFINITY;
    let mut per_plan: Vec<(usize, usize)> = Vec::new();
    for e in &out.events {
        match e.kind {
            EventKind::LoadStart { invocation, layer, .. } => {
                assert!(e.time >= last_complete);
                if let Some(&(inv, prev)) = per_plan.last() {
                    if inv == invocation {
                        assert!(layer > prev, "layers of one plan load in ascending order");
                    }
                }
                per_plan.push((invocation, layer));
            }
            EventKind::LoadComplete { .. } => last_complete = e.time,
            _ => {}
        }
    }
    assert!(!per_plan.is_empty());
}

#[test]
fn token_conservation() {
    let out = run(&small(Mode::EmoeL, 0.6, 80, 4)).unwrap();
    let s = &out.metrics.summary;
    let per_request: usize = out.metrics.requests.iter().map(|r| r.tokens).sum();
    assert_eq!(per_request as u64, s.tokens_generated);
    assert!((s.throughput * s.makespan - s.tokens_generated as f64).abs() < 1e-6 * s.tokens_generated as f64);
}

#[test]
fn same_seed_same_bytes() {
    for mode in [Mode::Random, Mode::EmoeE, Mode::Dynamic] {
        let a = run(&small(mode, 0.4, 50, 5)).unwrap();
        let b = run(&small(mode, 0.4, 50, 5)).unwrap();
        assert_eq!(events_csv(&a), events_csv(&b));
        assert_eq!(a.metrics, b.metrics);
    }
}

#[test]
fn budgeted_memory_is_exact_after_each_plan() {
    for phi in [0.2, 0.4, 0.6, 0.8] {
        let sc = small(Mode::EmoeA, phi, 100, 6);
        let full = sc.shape.full_model_bytes();
        let base = sc.shape.base_bytes;
        let want = base + (phi * 40.0).round() as u64 * sc.shape.expert_bytes;
        let out = run(&sc).unwrap();
        assert!(out.metrics.memory_timeline.iter().all(|&(_, b)| b <= full));
        let mut bytes = full;
        let mut applied = 0;
        for e in &out.events {
            match e.kind {
                EventKind::Memory { bytes: b } => bytes = b,
                EventKind::PlanApplied { .. } => {
                    assert_eq!(bytes, want, "phi {phi}");
                    applied += 1;
                }
                _ => {}
            }
        }
        assert!(applied > 0);
    }
}

#[test]
fn snapshots_follow_each_applied_plan() {
    let sc = small(Mode::EmoeA, 0.6, 100, 6);
    let budgets = budgets_from_fraction(&sc.shape, 0.6).unwrap();
    let out = run(&sc).unwrap();
    let applied: Vec<f64> = out
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::PlanApplied { .. }))
        .map(|e| e.time)
        .collect();
    let layers = sc.shape.num_moe_layers;
    assert_eq!(out.snapshots.len(), applied.len() * layers);
    for (i, s) in out.snapshots.iter().enumerate() {
        assert_eq!(s.time, applied[i / layers]);
        assert_eq!(s.layer, i % layers);
        assert_eq!(s.resident.len(), budgets[s.layer]);
    }
    assert!(run(&small(Mode::Baseline, 1.0, 20, 6)).unwrap().snapshots.is_empty());
}

#[test]
fn hit_rate_grows_with_budget() {
    for seed in [7, 8] {
        let mut last = 0.0;
        for phi in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let mut sc = small(Mode::EmoeA, phi, 150, seed);
            sc.config.budgets = budgets_from_fraction(&sc.shape, phi).unwrap();
            let h = run(&sc).unwrap().metrics.summary.hit_rate;
            assert!(h >= last, "phi {phi}: {h} < {last}");
            last = h;
        }
        assert_eq!(last, 1.0);
    }
}

#[test]
fn invocation_schedule_counts_admitted_prompts() {
    let mut sc = small(Mode::EmoeA, 0.5, 81, 9);
    sc.config.invocation_period = 40;
    let out = run(&sc).unwrap();
    let admitted = out
        .events
        .iter()
        .filter(|e| {
            matches!(
                e.kind,
                EventKind::Decision {
                    reason: moesim_core::scheduler::Reason::Admitted,
                    ..
                }
            )
        })
        .count();
    assert_eq!(out.metrics.summary.predictor_invocations, admitted.div_ceil(40));
    let mut sc = small(Mode::EmoeE, 0.5, 10, 9);
    sc.config.invocation_period = 40;
    let out = run(&sc).unwrap();
    assert_eq!(
        out.metrics.summary.predictor_invocations,
        10 - out.metrics.summary.dropped
    );
}

#[test]
fn dynamic_loading_is_slower() {
    let base = run(&small(Mode::Baseline, 1.0, 40, 10)).unwrap().metrics.summary;
    let dynamic = run(&small(Mode::Dynamic, 1.0, 40, 10)).unwrap().metrics.summary;
    assert!(dynamic.latency_mean > base.latency_mean);
    assert!(dynamic.peak_memory <= base.peak_memory);
}

#[test]
fn inconsistent_scenarios_are_rejected() {
    let mut sc = small(Mode::EmoeA, 0.5, 10, 11);
    sc.requests[3].task_id = "NOPE".into();
    let err = run(&sc).unwrap_err().to_string();
    assert!(err.contains("requests[3].task_id"), "{err}");
    let mut sc = small(Mode::EmoeA, 0.5, 10, 11);
    sc.config.budgets.pop();
    assert!(run(&sc).is_err());
    let mut sc = small(Mode::EmoeA, 0.5, 10, 11);
    sc.config.invocation_period = 0;
    assert!(run(&sc).is_err());
}

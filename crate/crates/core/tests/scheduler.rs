mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moesim_core::scheduler::{schedule, Reason, SchedulerState};
use support::alg1::reference_admission;
use support::instances::random_instance;

fn admitted(d: &[moesim_core::scheduler::Decision]) -> Vec<u64> {
    d.iter().filter(|d| d.admitted()).map(|d| d.request_id).collect()
}

#[test]
fn matches_reference_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut admitted_any = 0;
    let mut rejected_any = 0;
    for _ in 0..1000 {
        let inst = random_instance(&mut rng, 8, 8);
        let want = reference_admission(&inst.waiting, &inst.scheduled, inst.t_max, inst.delta_e, inst.c);
        let mut state = SchedulerState::with_queues(inst.t_max, inst.waiting.clone(), inst.scheduled.clone()).unwrap();
        let d = schedule(&mut state, inst.delta_e, inst.c);
        let got = admitted(&d);
        assert_eq!(got, want);
        admitted_any += got.len();
        rejected_any += inst.waiting.len() - got.len();
        assert!(state.current_scheduled_tokens() <= inst.t_max);
        assert_eq!(state.waiting().len() + got.len(), inst.waiting.len());
    }
    // the generator exercises both outcomes
    assert!(admitted_any > 100 && rejected_any > 100);
}

#[test]
fn oversized_request_stays_waiting() {
    let inst_req = moesim_core::workload::Request::new(0, 0.0, "T".into(), 500, 10.0, 5, 5).unwrap();
    let mut state = SchedulerState::new(400).unwrap();
    state.enqueue(inst_req);
    let d = schedule(&mut state, 0.0, 0.001);
    assert_eq!(d[0].reason, Reason::TokenBudget);
    assert_eq!(state.waiting().len(), 1);
}

proptest! {
    #[test]
    fn budget_and_guards_hold(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 8, 8);
        let mut state = SchedulerState::with_queues(inst.t_max, inst.waiting.clone(), inst.scheduled.clone()).unwrap();
        let d = schedule(&mut state, inst.delta_e, inst.c);
        let total: usize = state.scheduled().iter().map(|r| r.input_tokens).sum();
        prop_assert_eq!(total, state.current_scheduled_tokens());
        prop_assert!(total <= inst.t_max);
        for dec in d.iter().filter(|d| d.admitted()) {
            let r = state.scheduled().iter().find(|r| r.request_id == dec.request_id).unwrap();
            prop_assert!(dec.expected_latency.unwrap() < r.slo_ttft);
            prop_assert!(dec.scheduled_tokens <= inst.t_max);
        }
    }

    #[test]
    fn looser_requests_do_not_affect_stricter_ones(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 8, 8);
        prop_assume!(!inst.waiting.is_empty());
        let removed = inst.waiting[pick.index(inst.waiting.len())].clone();
        let fewer: Vec<_> = inst.waiting.iter().filter(|r| r.request_id != removed.request_id).cloned().collect();
        let mut a = SchedulerState::with_queues(inst.t_max, inst.waiting.clone(), inst.scheduled.clone()).unwrap();
        let mut b = SchedulerState::with_queues(inst.t_max, fewer, inst.scheduled.clone()).unwrap();
        let da = schedule(&mut a, inst.delta_e, inst.c);
        let db = schedule(&mut b, inst.delta_e, inst.c);
        for r in inst.waiting.iter().filter(|r| r.slo_ttft < removed.slo_ttft) {
            let x = da.iter().find(|d| d.request_id == r.request_id).unwrap();
            let y = db.iter().find(|d| d.request_id == r.request_id).unwrap();
            prop_assert_eq!(x.reason, y.reason);
        }
    }
}

use rand::Rng;

use moesim_core::workload::{Request, RequestState};

/// A random scheduling instance: waiting queue, scheduled queue, budget,
/// pending transfer time and per-token cost.
pub struct Instance {
    pub waiting: Vec<Request>,
    pub scheduled: Vec<Request>,
    pub t_max: usize,
    pub delta_e: f64,
    pub c: f64,
}

pub fn random_instance<R: Rng>(rng: &mut R, max_waiting: usize, max_scheduled: usize) -> Instance {
    let n_s = rng.random_range(0..=max_scheduled);
    let n_w = rng.random_range(0..=max_waiting);
    let mut id = 0u64;
    let mut make = |rng: &mut R, running: bool| {
        let g = rng.random_range(1..200);
        // a few SLO ties on purpose
        let slo = [2.0, 4.0, 6.0, 8.0][rng.random_range(0..4)]
            + if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(0.0..4.0)
            };
        let mut r = Request::new(
            id,
            rng.random_range(0.0..10.0_f64).floor(),
            "T".into(),
            rng.random_range(1..400),
            slo,
            g,
            g + rng.random_range(0..50),
        )
        .unwrap();
        id += 1;
        if running {
            r.state = RequestState::Running;
            r.runtime_so_far = rng.random_range(0.0..6.0);
            r.remaining_gen_estimate = rng.random_range(1..=g);
        }
        r
    };
    let scheduled: Vec<Request> = (0..n_s).map(|_| make(rng, true)).collect();
    let waiting: Vec<Request> = (0..n_w).map(|_| make(rng, false)).collect();
    let used: usize = scheduled.iter().map(|r| r.input_tokens).sum();
    Instance {
        waiting,
        scheduled,
        t_max: used + rng.random_range(1..1500),
        delta_e: if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..3.0)
        },
        c: rng.random_range(0.001..0.01),
    }
}

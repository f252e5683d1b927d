//! Step-by-step greedy admission, written from the pseudocode without
//! reusing any scheduler internals.

use moesim_core::workload::Request;

fn est(de: f64, w: f64, n: usize, g: f64, c: f64, r: f64) -> f64 {
    de + (w + n as f64 * g) * c + r
}

/// How many of `queue` (other than `who`) have at least `who`'s remaining estimate.
fn after(who: &Request, queue: &[&Request]) -> usize {
    queue
        .iter()
        .filter(|q| q.request_id != who.request_id && q.remaining_gen_estimate >= who.remaining_gen_estimate)
        .count()
}

/// Returns the ids admitted, in admission order.
pub fn reference_admission(waiting: &[Request], scheduled: &[Request], t_max: usize, de: f64, c: f64) -> Vec<u64> {
    let mut q_w: Vec<&Request> = waiting.iter().collect();
    // SLO stringiness, then arrival, then id
    for i in 1..q_w.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (q_w[j - 1], q_w[j]);
            let swap = b.slo_ttft < a.slo_ttft
                || (b.slo_ttft == a.slo_ttft && b.arrival_time < a.arrival_time)
                || (b.slo_ttft == a.slo_ttft && b.arrival_time == a.arrival_time && b.request_id < a.request_id);
            if !swap {
                break;
            }
            q_w.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut q_s: Vec<&Request> = scheduled.iter().collect();
    let mut t: usize = scheduled.iter().map(|r| r.input_tokens).sum();
    let mut w_admitted = 0usize;
    let mut admitted = Vec::new();
    for r in q_w {
        if !(r.input_tokens + t < t_max) {
            continue;
        }
        let w_new = (w_admitted + r.input_tokens) as f64;
        let own = est(
            de,
            w_new,
            after(r, &q_s),
            r.remaining_gen_estimate as f64,
            c,
            r.runtime_so_far,
        );
        if !(own < r.slo_ttft) {
            continue;
        }
        let mut with_r = q_s.clone();
        with_r.push(r);
        let mut ok = true;
        for s in &q_s {
            let g = s.remaining_gen_estimate as f64;
            let old = est(de, w_admitted as f64, after(s, &q_s), g, c, s.runtime_so_far);
            if old < s.slo_ttft {
                let new = est(de, w_new, after(s, &with_r), g, c, s.runtime_so_far);
                if !(new < s.slo_ttft) {
                    ok = false;
                }
            }
        }
        if ok {
            q_s.push(r);
            t += r.input_tokens;
            w_admitted += r.input_tokens;
            admitted.push(r.request_id);
        }
    }
    admitted
}

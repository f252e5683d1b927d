use std::collections::BTreeMap;

use rand::Rng;

use moesim_core::workload::{ModelShape, OutputLengthDist, Request, TaskId, TaskProfile};

pub fn profile(id: &str, sensitivity: Vec<bool>, w_o: f64) -> TaskProfile {
    TaskProfile {
        task_id: id.into(),
        name: id.into(),
        keywords: vec![id.to_lowercase()],
        input_length_dist: OutputLengthDist::Constant { value: 10.0 },
        output_length_dist: OutputLengthDist::Constant { value: w_o },
        expected_output_tokens: w_o,
        slo_ttft: 5.0,
        sensitivity,
        routing_prior: None,
    }
}

pub fn request(id: u64, task: &str, input: usize) -> Request {
    Request::new(id, 0.0, task.into(), input, 5.0, 10, 10).unwrap()
}

/// Direct evaluation: loop over requests rather than grouping by task.
pub fn direct_expected(
    m: usize,
    e: usize,
    profiles: &[TaskProfile],
    reqs: &[Request],
    freq: &BTreeMap<TaskId, Vec<Vec<f64>>>,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; e]; m];
    for r in reqs {
        let p = profiles.iter().find(|p| p.task_id == r.task_id).unwrap();
        for l in 0..m {
            let s = if p.sensitivity[l] { 1.0 } else { 0.0 };
            for i in 0..e {
                out[l][i] += (r.input_tokens as f64 + p.expected_output_tokens) * s * freq[&r.task_id][l][i];
            }
        }
    }
    out
}

/// A random expected-token instance; requests before `split` are running.
pub struct TokensCase {
    pub shape: ModelShape,
    pub profiles: Vec<TaskProfile>,
    pub freq: BTreeMap<TaskId, Vec<Vec<f64>>>,
    pub reqs: Vec<Request>,
    pub split: usize,
}

pub fn random_tokens_case<R: Rng>(rng: &mut R) -> TokensCase {
    let m = rng.random_range(1..6);
    let e = rng.random_range(2..12);
    let shape = ModelShape::new(m, e, 1, 1, 0).unwrap();
    let tasks = rng.random_range(1..5);
    let profiles: Vec<TaskProfile> = (0..tasks)
        .map(|t| {
            let sens = (0..m).map(|_| rng.random_bool(0.6)).collect();
            profile(&format!("T{t}"), sens, rng.random_range(1.0..500.0))
        })
        .collect();
    let freq: BTreeMap<TaskId, Vec<Vec<f64>>> = profiles
        .iter()
        .map(|p| {
            let rows = (0..m)
                .map(|_| {
                    let raw: Vec<f64> = (0..e).map(|_| rng.random::<f64>()).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / s).collect()
                })
                .collect();
            (p.task_id.clone(), rows)
        })
        .collect();
    let n_req = rng.random_range(0..20);
    let reqs: Vec<Request> = (0..n_req)
        .map(|i| {
            let t = rng.random_range(0..tasks);
            request(i, &format!("T{t}"), rng.random_range(1..2000))
        })
        .collect();
    let split = rng.random_range(0..=reqs.len());
    TokensCase {
        shape,
        profiles,
        freq,
        reqs,
        split,
    }
}

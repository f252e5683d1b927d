use rand::Rng;

use moesim_core::workload::{ModelShape, StochasticMatrix, TraceCalibration};

/// Rows with one dominant entry at a random column and random mass elsewhere.
pub fn random_chain<R: Rng>(rng: &mut R, e: usize) -> Vec<Vec<f64>> {
    (0..e)
        .map(|_| {
            let peak = rng.random_range(0..e);
            let mut row: Vec<f64> = (0..e).map(|_| rng.random_range(0.0..1.0)).collect();
            row[peak] += rng.random_range(1.0..4.0);
            let s: f64 = row.iter().sum();
            row.iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Stationary distribution by power iteration.
pub fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let e = p.len();
    let mut pi = vec![1.0 / e as f64; e];
    for _ in 0..10_000 {
        let mut next = vec![0.0; e];
        for i in 0..e {
            for j in 0..e {
                next[j] += pi[i] * p[i][j];
            }
        }
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

/// Best achievable top-1 accuracy predicting the next state of the chain.
pub fn bayes_rate(p: &[Vec<f64>], pi: &[f64]) -> f64 {
    p.iter()
        .zip(pi)
        .map(|(row, w)| w * row.iter().cloned().fold(0.0, f64::max))
        .sum()
}

/// Every layer pair follows `p`; every prompt starts from the stationary
/// distribution, so all layers share that marginal.
pub fn stationary_calibration(shape: &ModelShape, p: &[Vec<f64>], seed: u64) -> TraceCalibration {
    let pi = stationary(p);
    let layer = StochasticMatrix::from_rows(p.to_vec()).unwrap();
    let mut cal = TraceCalibration::from_stickiness(shape, 0.0, 0.0, seed);
    cal.layer_transition = vec![layer; shape.num_moe_layers - 1];
    cal.prompt_transition = StochasticMatrix::from_rows(vec![pi; shape.experts_per_layer]).unwrap();
    cal
}

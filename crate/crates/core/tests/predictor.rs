mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moesim_core::predictor::TransitionModel;
use moesim_core::workload::{gen_routing_trace, ModelShape, TaskId};
use support::markov::{bayes_rate, random_chain, stationary, stationary_calibration};

fn labels(n: usize) -> Vec<TaskId> {
    vec![TaskId::from("T"); n]
}

#[test]
fn fitted_transitions_match_the_generator() {
    let shape = ModelShape::new(3, 6, 1, 1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_chain(&mut rng, 6);
    let cal = stationary_calibration(&shape, &p, 17);
    let trace = gen_routing_trace(&shape, &cal, 5000, 8).unwrap();
    let model = TransitionModel::<f64>::fit(&shape, &trace, &labels(trace.len()), 0.01).unwrap();
    let worst = (0..2)
        .flat_map(|l| (0..6).map(move |i| (l, i)))
        .map(|(l, i)| {
            model
                .layer_row(l, i)
                .iter()
                .zip(&p[i])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "max abs error {worst}");
}

#[test]
fn layerwise_accuracy_near_bayes_rate() {
    let shape = ModelShape::new(4, 8, 1, 1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_chain(&mut rng, 8);
    let pi = stationary(&p);
    let bayes = bayes_rate(&p, &pi);
    let cal = stationary_calibration(&shape, &p, 40);
    let mut train_cal = cal.clone();
    train_cal.rng_seed += 1;
    let train = gen_routing_trace(&shape, &train_cal, 3000, 4).unwrap();
    let test = gen_routing_trace(&shape, &cal, 3000, 4).unwrap();
    let model = TransitionModel::<f64>::fit(&shape, &train, &labels(train.len()), 0.01).unwrap();
    let (mut right, mut total) = (0usize, 0usize);
    for prompt in &test.prompts {
        for t in 0..prompt.tokens() {
            for l in 1..4 {
                let guess = model.predict_layerwise(&[prompt.top1(l - 1, t)], l).unwrap().top_k[0];
                right += usize::from(guess == prompt.top1(l, t));
                total += 1;
            }
        }
    }
    let acc = right as f64 / total as f64;
    assert!((acc - bayes).abs() < 0.03, "accuracy {acc} vs bayes {bayes}");
}

#[test]
fn heavy_smoothing_flattens_scores() {
    let shape = ModelShape::new(2, 5, 1, 1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cal = stationary_calibration(&shape, &random_chain(&mut rng, 5), 1);
    let trace = gen_routing_trace(&shape, &cal, 200, 4).unwrap();
    let model = TransitionModel::<f64>::fit(&shape, &trace, &labels(trace.len()), 1e9).unwrap();
    for i in 0..5 {
        for v in model.layer_row(0, i) {
            assert!((v - 0.2).abs() < 1e-6);
        }
    }
}

#[test]
fn model_round_trips_through_json() {
    let shape = ModelShape::new(3, 4, 2, 1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cal = stationary_calibration(&shape, &random_chain(&mut rng, 4), 9);
    let trace = gen_routing_trace(&shape, &cal, 50, 6).unwrap();
    let model = TransitionModel::<f64>::fit(&shape, &trace, &labels(trace.len()), 0.01).unwrap();
    let mut buf = Vec::new();
    model.save(&mut buf).unwrap();
    let back = TransitionModel::<f64>::load(buf.as_slice()).unwrap();
    assert_eq!(back, model);
    let prev: Vec<Vec<usize>> = (0..3).map(|l| trace.prompts[0].frequent_experts(l, 2)).collect();
    assert_eq!(
        back.predict_all_layers(&prev).unwrap(),
        model.predict_all_layers(&prev).unwrap()
    );
    // f32 evaluation ranks the same way on this model
    let narrow = TransitionModel::<f32>::fit(&shape, &trace, &labels(trace.len()), 0.01).unwrap();
    let a = model.predict_layerwise_chain(&prev[0]).unwrap();
    let b = narrow.predict_layerwise_chain(&prev[0]).unwrap();
    assert_eq!(a.layers[0].top_k, b.layers[0].top_k);
}

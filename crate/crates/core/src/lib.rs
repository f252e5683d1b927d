//! Discrete-event simulation of memory-efficient mixture-of-experts serving.
//!
//! The crate models the pieces of an MoE inference server that decide which
//! experts live in device memory:
//!
//! - [`workload`]: Poisson request arrivals, synthetic routing traces with
//!   tunable layer-to-layer and prompt-to-prompt correlation, keyword task
//!   classification.
//! - [`predictor`]: a smoothed first-order transition model that predicts the
//!   experts of the next layer or of the next prompt.
//! - [`expert_store`]: expected per-expert token loads, budgeted expert
//!   selection, transfer plans and token routing against a placement.
//! - [`scheduler`]: SLO-aware greedy admission driven by an expected-latency
//!   estimate.
//! - [`engine`]: the event loop tying them together, plus metrics.
//!
//! Estimation code is generic over [`Scalar`]/[`Real`]; the simulator itself
//! runs in `f64`, and the aliases below name the concrete types it uses.

pub mod engine;
pub mod error;
pub mod expert_store;
pub mod predictor;
pub mod scalar;
pub mod scheduler;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};

pub type TransitionModel = predictor::TransitionModel<f64>;
pub type Prediction = predictor::Prediction<f64>;
pub type ExpectedTokens = expert_store::ExpectedTokens3D<f64>;
pub type LatencyEstimate = scheduler::LatencyEstimate<f64>;
pub type TransitionMatrix = workload::StochasticMatrix<f64>;

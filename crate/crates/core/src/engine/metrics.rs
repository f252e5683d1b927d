use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::events::{Event, EventKind};
use crate::error::Result;
use crate::workload::TaskId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub request_id: u64,
    pub task_id: TaskId,
    pub arrival: f64,
    pub slo_ttft: f64,
    pub ttft: Option<f64>,
    pub latency: Option<f64>,
    pub tokens: usize,
    pub dropped: bool,
}

impl RequestMetrics {
    /// Dropped, or first token later than the target.
    pub fn slo_violated(&self) -> bool {
        self.dropped || self.ttft.is_some_and(|t| t > self.slo_ttft)
    }
}

/// Aggregates of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub requests: usize,
    pub completed: usize,
    pub dropped: usize,
    pub slo_violations: usize,
    pub latency_mean: f64,
    pub latency_p50: f64,
    pub latency_p90: f64,
    pub ttft_p50: f64,
    pub ttft_p90: f64,
    pub hits: u64,
    pub lookups: u64,
    pub hit_rate: f64,
    pub tokens_generated: u64,
    pub makespan: f64,
    pub throughput: f64,
    pub peak_memory: u64,
    pub final_memory: u64,
    pub predictor_invocations: usize,
    pub predictor_overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub requests: Vec<RequestMetrics>,
    /// `(time, device bytes)` after every placement change.
    pub memory_timeline: Vec<(f64, u64)>,
    pub summary: MetricsSummary,
}

/// Nearest-rank percentile of sorted data; 0 when empty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Derives every metric from the event log of a finished run.
///
/// Hit rate is 1 when no token was routed.
pub fn collect_metrics(events: &[Event]) -> Metrics {
    let mut requests: BTreeMap<u64, RequestMetrics> = BTreeMap::new();
    let mut memory_timeline = Vec::new();
    let (mut hits, mut lookups, mut generated) = (0u64, 0u64, 0u64);
    let mut invocations = 0usize;
    let mut overhead = 0.0;
    let mut predictor_started = BTreeMap::new();

    for e in events {
        match &e.kind {
            EventKind::Arrival {
                request_id,
                task_id,
                slo_ttft,
            } => {
                requests.insert(
                    *request_id,
                    RequestMetrics {
                        request_id: *request_id,
                        task_id: task_id.clone(),
                        arrival: e.time,
                        slo_ttft: *slo_ttft,
                        ttft: None,
                        latency: None,
                        tokens: 0,
                        dropped: false,
                    },
                );
            }
            EventKind::FirstToken { request_id } => {
                if let Some(r) = requests.get_mut(request_id) {
                    r.ttft = Some(e.time - r.arrival);
                }
            }
            EventKind::Completion { request_id, tokens } => {
                if let Some(r) = requests.get_mut(request_id) {
                    r.latency = Some(e.time - r.arrival);
                    r.tokens = *tokens;
                }
            }
            EventKind::Dropped { request_id } => {
                if let Some(r) = requests.get_mut(request_id) {
                    r.dropped = true;
                }
            }
            EventKind::IterationEnd {
                hits: h,
                lookups: l,
                generated: g,
                ..
            } => {
                hits += h;
                lookups += l;
                generated += g;
            }
            EventKind::PredictorStart { invocation, .. } => {
                invocations += 1;
                predictor_started.insert(*invocation, e.time);
            }
            EventKind::PredictorEnd { invocation } => {
                if let Some(t0) = predictor_started.remove(invocation) {
                    overhead += e.time - t0;
                }
            }
            EventKind::Memory { bytes } => memory_timeline.push((e.time, *bytes)),
            _ => {}
        }
    }

    let requests: Vec<RequestMetrics> = requests.into_values().collect();
    let mut latencies: Vec<f64> = requests.iter().filter_map(|r| r.latency).collect();
    let mut ttfts: Vec<f64> = requests.iter().filter_map(|r| r.ttft).collect();
    latencies.sort_by(f64::total_cmp);
    ttfts.sort_by(f64::total_cmp);
    let first_arrival = requests.iter().map(|r| r.arrival).fold(f64::INFINITY, f64::min);
    let last_completion = requests
        .iter()
        .filter_map(|r| r.latency.map(|l| r.arrival + l))
        .fold(f64::NEG_INFINITY, f64::max);
    let makespan = if last_completion.is_finite() {
        last_completion - first_arrival
    } else {
        0.0
    };
    let summary = MetricsSummary {
        requests: requests.len(),
        completed: latencies.len(),
        dropped: requests.iter().filter(|r| r.dropped).count(),
        slo_violations: requests.iter().filter(|r| r.slo_violated()).count(),
        latency_mean: if latencies.is_empty() {
            0.0
        } else {
            latencies.iter().sum::<f64>() / latencies.len() as f64
        },
        latency_p50: percentile(&latencies, 0.5),
        latency_p90: percentile(&latencies, 0.9),
        ttft_p50: percentile(&ttfts, 0.5),
        ttft_p90: percentile(&ttfts, 0.9),
        hits,
        lookups,
        hit_rate: if lookups == 0 {
            1.0
        } else {
            hits as f64 / lookups as f64
        },
        tokens_generated: generated,
        makespan,
        throughput: if makespan > 0.0 {
            generated as f64 / makespan
        } else {
            0.0
        },
        peak_memory: memory_timeline.iter().map(|m| m.1).max().unwrap_or(0),
        final_memory: memory_timeline.last().map(|m| m.1).unwrap_or(0),
        predictor_invocations: invocations,
        predictor_overhead: overhead,
    };
    Metrics {
        requests,
        memory_timeline,
        summary,
    }
}

pub const REQUEST_CSV_HEADER: &str = "request_id,task_id,arrival,slo_ttft,ttft,latency,tokens,dropped,slo_violated";

impl Metrics {
    /// Per-request table under [`REQUEST_CSV_HEADER`].
    pub fn write_requests_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{REQUEST_CSV_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.requests {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.request_id,
                r.task_id,
                r.arrival,
                r.slo_ttft,
                opt(r.ttft),
                opt(r.latency),
                r.tokens,
                r.dropped,
                r.slo_violated()
            )?;
        }
        Ok(())
    }

    pub fn write_memory_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,bytes")?;
        for (t, b) in &self.memory_timeline {
            writeln!(out, "{t},{b}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(time: f64, kind: EventKind) -> Event {
        Event { time, kind }
    }

    #[test]
    fn single_request_latency() {
        let log = vec![
            ev(
                0.0,
                EventKind::Arrival {
                    request_id: 7,
                    task_id: "A".into(),
                    slo_ttft: 1.0,
                },
            ),
            ev(0.5, EventKind::FirstToken { request_id: 7 }),
            ev(
                2.5,
                EventKind::Completion {
                    request_id: 7,
                    tokens: 3,
                },
            ),
        ];
        let m = collect_metrics(&log);
        assert_eq!(m.requests[0].latency, Some(2.5));
        assert_eq!(m.requests[0].ttft, Some(0.5));
        assert_eq!(m.summary.makespan, 2.5);
        assert_eq!(m.summary.slo_violations, 0);
    }

    #[test]
    fn no_tokens_means_zero_throughput() {
        let m = collect_metrics(&[]);
        assert_eq!(m.summary.throughput, 0.0);
        assert_eq!(m.summary.hit_rate, 1.0);
    }

    #[test]
    fn nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(percentile(&v, 0.5), 5.0);
        assert_eq!(percentile(&v, 0.9), 9.0);
        assert_eq!(percentile(&[3.0], 0.9), 3.0);
    }
}

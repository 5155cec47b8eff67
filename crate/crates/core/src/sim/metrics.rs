use serde::{Deserialize, Serialize};

use super::trace::Trace;

/// Counts and latencies recomputed from a run trace alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub jobs_submitted: usize,
    pub job_transitions: usize,
    pub jobs_completed: usize,
    pub jobs_failed: usize,
    pub jobs_canceled: usize,
    pub backend_queries: usize,
    pub handshakes: usize,
    pub transport_calls: usize,
    pub transfers: usize,
    pub transfer_bytes: u64,
    pub frontends_ready: usize,
    pub frontends_failed: usize,
    pub time_to_frontend_s: Vec<f64>,
    pub workload_latency_s: Vec<f64>,
    pub routes_ok: usize,
    pub routes_failed: usize,
    pub errors: usize,
    pub illegal_transitions: u64,
}

impl ScenarioMetrics {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut m = ScenarioMetrics::default();
        for e in &trace.events {
            match e.kind.as_str() {
                "job_submitted" => m.jobs_submitted += 1,
                "job_transition" => {
                    m.job_transitions += 1;
                    match e.str("to") {
                        Some("Completed") => m.jobs_completed += 1,
                        Some("Failed") => m.jobs_failed += 1,
                        Some("Canceled") => m.jobs_canceled += 1,
                        _ => {}
                    }
                }
                "transport_call" => {
                    m.transport_calls += 1;
                    match e.str("verb") {
                        Some("batch_status") => m.backend_queries += 1,
                        Some("handshake") => m.handshakes += 1,
                        _ => {}
                    }
                }
                "transfer" => {
                    m.transfers += 1;
                    m.transfer_bytes += e.u64("bytes").unwrap_or(0);
                }
                "frontend_ready" => {
                    m.frontends_ready += 1;
                    m.time_to_frontend_s.extend(e.f64("ttf_s"));
                }
                "frontend_failed" => m.frontends_failed += 1,
                "workload_started" => m.workload_latency_s.extend(e.f64("latency_s")),
                "route" => {
                    if e.fields.get("ok").and_then(|v| v.as_bool()) == Some(true) {
                        m.routes_ok += 1;
                    } else {
                        m.routes_failed += 1;
                    }
                }
                "error" => m.errors += 1,
                "run_finished" => m.illegal_transitions = e.u64("illegal_transitions").unwrap_or(0),
                _ => {}
            }
        }
        m
    }
}

/// Median of `values`; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

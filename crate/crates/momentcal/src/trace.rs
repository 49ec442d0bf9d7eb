//! Training reports and per-update traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::SetDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePhase {
    Mean,
    Moment { degree: u32 },
}

/// One recorded gradient update with the measurements that triggered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub phase: UpdatePhase,
    /// Outer round the update belongs to (1-based).
    pub outer_round: u64,
    pub selector: SetDescriptor,
    pub sign: i8,
    /// Measured violation gap (exact conditional gap in exact mode,
    /// empirical average gap in sample mode).
    pub violation: f64,
    /// Set mass (exact) or member fraction `n'/n` (sample mode).
    pub mass: f64,
    /// Squared-error potential against the phase's target labels, before and
    /// after the update (exact mode only).
    pub potential_before: Option<f64>,
    pub potential_after: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    /// No violating cell remained.
    Converged,
    /// Training converged, but an iteration cap was exceeded along the way
    /// (a low-probability statistical failure event in sample mode; logged,
    /// never silently discarded).
    ConvergedWithCapOverrun,
}

/// Iteration and update accounting for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub outer_iterations: u64,
    pub mean_updates: u64,
    pub per_degree_updates: BTreeMap<u32, u64>,
    pub total_updates: u64,
    pub halt_reason: HaltReason,
    /// Cap on outer iterations implied by the mean learning rate.
    pub outer_cap: u64,
    /// Cap on the steps of a single pseudo-moment loop.
    pub inner_cap: u64,
    /// Fresh blocks drawn (sample and oracle modes; zero in exact mode).
    pub blocks_consumed: u64,
    pub samples_consumed: u64,
    /// Number of cap overruns observed (statistical failure events).
    pub statistical_failures: u64,
    /// Oracle invocations and total time spent in them (oracle mode).
    pub oracle_calls: u64,
    pub oracle_seconds: f64,
}

impl TrainReport {
    pub fn new(outer_cap: u64, inner_cap: u64) -> Self {
        TrainReport {
            outer_iterations: 0,
            mean_updates: 0,
            per_degree_updates: BTreeMap::new(),
            total_updates: 0,
            halt_reason: HaltReason::Converged,
            outer_cap,
            inner_cap,
            blocks_consumed: 0,
            samples_consumed: 0,
            statistical_failures: 0,
            oracle_calls: 0,
            oracle_seconds: 0.0,
        }
    }

    pub fn record_mean_update(&mut self) {
        self.mean_updates += 1;
        self.total_updates += 1;
    }

    pub fn record_moment_update(&mut self, degree: u32) {
        *self.per_degree_updates.entry(degree).or_insert(0) += 1;
        self.total_updates += 1;
    }

    /// Worst-case total updates for the configured caps and degree count:
    /// `outer_cap * (1 + n_degrees * inner_cap)`.
    pub fn update_cap(&self, n_degrees: u64) -> u64 {
        self.outer_cap * (1 + n_degrees * self.inner_cap)
    }
}

/// Iteration cap `ceil(1/rate^2) - 1` for a projected-descent phase with the
/// given learning rate.
pub fn iteration_cap(rate: f64) -> u64 {
    let raw = 1.0 / (rate * rate);
    (raw.ceil() as u64).saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caps_for_tenth_rate() {
        assert_eq!(iteration_cap(0.1), 99);
        assert_eq!(iteration_cap(0.135), 54);
        // alpha = beta = 0.1, k = 4 (three inner loops beyond the mean):
        // 99 * (1 + 3 * 99) = 29502 worst-case updates.
        let report = TrainReport::new(iteration_cap(0.1), iteration_cap(0.1));
        assert_eq!(report.update_cap(3), 29502);
    }
}

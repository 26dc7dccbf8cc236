//! Time-stamped training metrics and communication accounting.

use serde::{Deserialize, Serialize};

use crate::config::Algorithm;

/// Cumulative message and outcome counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub uplinks: u64,
    pub broadcasts: u64,
    pub unicasts: u64,
    pub successes: u64,
    pub failures: u64,
}

impl Counters {
    /// Uplink messages plus downlink messages, a broadcast counting once.
    pub fn messages(&self) -> u64 {
        self.uplinks + self.broadcasts + self.unicasts
    }
}

/// One test-set evaluation of the global model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub time: f64,
    pub round: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub counters: Counters,
}

/// Outcome of one server-side aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub time: f64,
    pub round: u64,
    pub uploads: u64,
    pub successes: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub algorithm: Algorithm,
    pub time_budget: f64,
    pub evaluations: Vec<EvalRecord>,
    pub rounds: Vec<RoundRecord>,
    pub counters: Counters,
    /// Successful uploads that entered the merge with weight zero.
    pub zero_weight_uploads: u64,
    /// Due users the scheduler could not serve at any bandwidth.
    pub disqualified: u64,
    /// Partition samples taken from a substitute class.
    pub substitutions: usize,
    /// Upload attempts, successes and summed success probability per user.
    pub user_attempts: Vec<u64>,
    pub user_successes: Vec<u64>,
    pub user_expected: Vec<f64>,
}

impl RunMetrics {
    pub fn new(algorithm: Algorithm, num_users: usize, time_budget: f64) -> Self {
        Self {
            algorithm,
            time_budget,
            evaluations: Vec::new(),
            rounds: Vec::new(),
            counters: Counters::default(),
            zero_weight_uploads: 0,
            disqualified: 0,
            substitutions: 0,
            user_attempts: vec![0; num_users],
            user_successes: vec![0; num_users],
            user_expected: vec![0.0; num_users],
        }
    }

    /// Records one upload attempt by `user` that succeeds with probability `p`.
    pub fn record_upload(&mut self, user: usize, p: f64, success: bool) {
        self.counters.uplinks += 1;
        self.user_attempts[user] += 1;
        self.user_expected[user] += p;
        if success {
            self.counters.successes += 1;
            self.user_successes[user] += 1;
        } else {
            self.counters.failures += 1;
        }
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.evaluations.last().map(|e| e.accuracy)
    }

    /// Mean accuracy over evaluations in the last fifth of the time budget,
    /// or the last evaluation if none falls there.
    pub fn converged_accuracy(&self) -> Option<f64> {
        let start = 0.8 * self.time_budget;
        let tail: Vec<f64> =
            self.evaluations.iter().filter(|e| e.time >= start).map(|e| e.accuracy).collect();
        if tail.is_empty() {
            self.final_accuracy()
        } else {
            Some(tail.iter().sum::<f64>() / tail.len() as f64)
        }
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.evaluations.iter().map(|e| e.accuracy).reduce(f64::max)
    }

    /// First evaluation reaching `target`.
    pub fn first_reaching(&self, target: f64) -> Option<&EvalRecord> {
        self.evaluations.iter().find(|e| e.accuracy >= target)
    }
}

/// Target accuracy and the communication spent to first reach it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetCrossing {
    pub target: f64,
    /// `None` when the target was never reached.
    pub messages: Option<u64>,
    pub time: Option<f64>,
}

pub fn count_comm(metrics: &RunMetrics, targets: &[f64]) -> Vec<TargetCrossing> {
    targets
        .iter()
        .map(|&target| {
            let hit = metrics.first_reaching(target);
            TargetCrossing { target, messages: hit.map(|e| e.counters.messages()), time: hit.map(|e| e.time) }
        })
        .collect()
}

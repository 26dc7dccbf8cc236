//! Event-triggered baselines: FedAvg, FedAsync and FedAT.
//!
//! All three use the equal bandwidth share `B/U` and nominal delays, so each
//! source (the whole population, a user, or a tier) completes local rounds
//! with a fixed period. The server reacts to completions in time order, ties
//! going to the lower source id.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::aggregation::{fedasync_aggregate, fedat_aggregate, swapped_count_weights, weighted_mean, Upload};
use crate::learner::ParamVector;
use crate::metrics::RoundRecord;
use crate::wireless::{decoded, stp};

use super::{Recorder, RunOptions, RunResult, Simulation};

/// A periodic completion: source `source` finishing its `index`-th round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledEvent {
    pub time: f64,
    pub source: usize,
    /// 1-based completion count of this source.
    pub index: u64,
}

impl Eq for ScheduledEvent {}

impl Ord for ScheduledEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.source.cmp(&other.source))
    }
}

impl PartialOrd for ScheduledEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Completions of sources with the given periods, in processing order, up
/// to `horizon` seconds and at most `limit` events. Event times are
/// `index * period`, so coincident completions compare equal exactly.
pub fn periodic_schedule(periods: &[f64], horizon: f64, limit: u64) -> Vec<ScheduledEvent> {
    let mut queue: BinaryHeap<Reverse<ScheduledEvent>> = periods
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0 && p <= horizon)
        .map(|(source, &p)| Reverse(ScheduledEvent { time: p, source, index: 1 }))
        .collect();
    let mut events = Vec::new();
    while let Some(Reverse(ev)) = queue.pop() {
        if events.len() as u64 >= limit {
            break;
        }
        events.push(ev);
        let index = ev.index + 1;
        let time = index as f64 * periods[ev.source];
        if time <= horizon {
            queue.push(Reverse(ScheduledEvent { time, source: ev.source, index }));
        }
    }
    events
}

impl Simulation<'_> {
    fn share(&self) -> f64 {
        self.env.channel.total_bandwidth / self.env.users.len() as f64
    }

    /// Uploads `local` from `user` at the equal share; true when decoded.
    fn upload_equal_share(&self, rec: &mut Recorder<'_>, user: usize, counter: u64) -> bool {
        let b = self.share();
        let d = self.env.users[user].distance;
        let ok = decoded(self.fading(user, counter), b, d, &self.env.channel);
        rec.metrics.record_upload(user, stp(b, d, &self.env.channel), ok);
        ok
    }

    pub(super) fn run_fedavg(&self, options: RunOptions) -> RunResult {
        let env = &self.env;
        let period = env.users.iter().map(|u| u.round_time).fold(0.0, f64::max);
        let events = periodic_schedule(&[period], env.time_budget, self.max_rounds());
        let mut global = env.init.clone();
        let mut rec = Recorder::new(self, events.len() as u64, options, &global);

        for ev in &events {
            let round = ev.index;
            rec.metrics.counters.broadcasts += 1;
            let mut received = Vec::new();
            for u in 0..env.users.len() {
                let local = self.local_model(u, &global, round - 1);
                if self.upload_equal_share(&mut rec, u, round) {
                    received.push((u, local));
                }
            }
            let record = RoundRecord {
                time: ev.time,
                round,
                uploads: env.users.len() as u64,
                successes: received.len() as u64,
                failures: (env.users.len() - received.len()) as u64,
            };
            let uploads: Vec<Upload<'_>> = received
                .iter()
                .map(|(u, model)| Upload { user_id: *u, data_size: env.users[*u].data_size, model })
                .collect();
            if let Ok(model) = weighted_mean(&uploads) {
                global = model;
            }
            rec.aggregated(record, &global);
        }
        rec.finish(global)
    }

    pub(super) fn run_fedasync(&self, options: RunOptions) -> RunResult {
        let env = &self.env;
        let periods: Vec<f64> = env.users.iter().map(|u| u.round_time).collect();
        let events = periodic_schedule(&periods, env.time_budget, self.max_rounds());
        let mut global = env.init.clone();
        let mut rec = Recorder::new(self, events.len() as u64, options, &global);
        rec.metrics.counters.broadcasts += 1;
        let mut dispatched: Vec<ParamVector> = vec![global.clone(); env.users.len()];

        for (i, ev) in events.iter().enumerate() {
            let u = ev.source;
            let local = self.local_model(u, &dispatched[u], ev.index - 1);
            let ok = self.upload_equal_share(&mut rec, u, ev.index);
            if ok {
                global = fedasync_aggregate(&global, &local, self.cfg.psi).expect("psi validated");
            }
            rec.metrics.counters.unicasts += 1;
            dispatched[u] = global.clone();
            let record = RoundRecord {
                time: ev.time,
                round: i as u64 + 1,
                uploads: 1,
                successes: ok as u64,
                failures: !ok as u64,
            };
            rec.aggregated(record, &global);
        }
        rec.finish(global)
    }

    pub(super) fn run_fedat(&self, options: RunOptions) -> RunResult {
        let env = &self.env;
        let num_tiers = env.schedule.num_tiers;
        let members: Vec<Vec<usize>> = (1..=num_tiers).map(|m| env.schedule.members(m).collect()).collect();
        // A tier's synchronous round lasts as long as its slowest member.
        let periods: Vec<f64> = members
            .iter()
            .map(|ms| ms.iter().map(|&u| env.users[u].round_time).fold(0.0, f64::max))
            .collect();
        let events = periodic_schedule(&periods, env.time_budget, self.max_rounds());
        let mut global = env.init.clone();
        let mut rec = Recorder::new(self, events.len() as u64, options, &global);
        rec.metrics.counters.broadcasts += 1;
        let mut tier_models: Vec<ParamVector> = vec![global.clone(); num_tiers];
        let mut dispatched: Vec<ParamVector> = vec![global.clone(); num_tiers];
        let mut completions = vec![0u64; num_tiers];

        for (i, ev) in events.iter().enumerate() {
            let t = ev.source;
            let mut received = Vec::new();
            for &u in &members[t] {
                let local = self.local_model(u, &dispatched[t], ev.index - 1);
                if self.upload_equal_share(&mut rec, u, ev.index) {
                    received.push((u, local));
                }
            }
            let uploads: Vec<Upload<'_>> = received
                .iter()
                .map(|(u, model)| Upload { user_id: *u, data_size: env.users[*u].data_size, model })
                .collect();
            if let Ok(model) = weighted_mean(&uploads) {
                tier_models[t] = model;
            }
            completions[t] += 1;
            global = fedat_merge(&tier_models, &completions);
            rec.metrics.counters.unicasts += members[t].len() as u64;
            dispatched[t] = global.clone();
            let record = RoundRecord {
                time: ev.time,
                round: i as u64 + 1,
                uploads: members[t].len() as u64,
                successes: received.len() as u64,
                failures: (members[t].len() - received.len()) as u64,
            };
            rec.aggregated(record, &global);
        }
        rec.finish(global)
    }
}

/// Global FedAT model over the tiers that have completed at least one round,
/// each weighted by the completion count of its mirror-image tier.
fn fedat_merge(tier_models: &[ParamVector], completions: &[u64]) -> ParamVector {
    let active: Vec<usize> = (0..completions.len()).filter(|&t| completions[t] > 0).collect();
    let counts: Vec<u64> = active.iter().map(|&t| completions[t]).collect();
    let swapped = swapped_count_weights(&counts).expect("at least one tier has completed");
    let models: Vec<ParamVector> = active.iter().map(|&t| tier_models[t].clone()).collect();
    fedat_aggregate(&models, &swapped.to_f64()).expect("weights form a simplex")
}

//! Time-triggered loop: global aggregations fire at every multiple of `dT`.

use crate::aggregation::{ttfed_global, ttfed_tier_weights, AggregationInput, Upload};
use crate::allocator::{plan_round, QualifiedUser};
use crate::config::SchedulingChannel;
use crate::learner::ParamVector;
use crate::metrics::RoundRecord;
use crate::wireless::{decoded, stp};

use super::{Recorder, RunOptions, RunResult, Simulation};

impl Simulation<'_> {
    /// Rounds `k` with `k dT` inside the time budget, capped by the round limit.
    pub(super) fn ttfed_rounds(&self) -> u64 {
        let dt = self.env.schedule.delta_t;
        let fit = (self.env.time_budget / dt * (1.0 + 1e-12)).floor();
        (fit as u64).min(self.max_rounds())
    }

    pub(super) fn run_ttfed(&self, options: RunOptions) -> RunResult {
        let env = &self.env;
        let sched = &env.schedule;
        let num_tiers = sched.num_tiers;
        let rounds = self.ttfed_rounds();
        let mut global = env.init.clone();
        let mut rec = Recorder::new(self, rounds, options, &global);
        // Model each tier started its current local round from.
        let mut start_models: Vec<ParamVector> = vec![global.clone(); num_tiers];
        let members: Vec<Vec<usize>> = (1..=num_tiers).map(|m| sched.members(m).collect()).collect();

        for k in 1..=rounds {
            rec.metrics.counters.broadcasts += 1;
            for m in sched.starting_tiers(k) {
                if k > 1 {
                    start_models[m - 1] = global.clone();
                }
            }

            let weights = ttfed_tier_weights(k, num_tiers).expect("round index is positive");
            let due = sched.due_tiers(k);
            let mut qualified = Vec::new();
            for &m in &due {
                for &u in &members[m - 1] {
                    let user = &env.users[u];
                    let slack = m as f64 * sched.delta_t - user.compute_delay;
                    let gain = match self.cfg.scheduling_channel {
                        SchedulingChannel::Mean => env.mean_gain(u),
                        SchedulingChannel::Realized => self.fading(u, k) * env.mean_gain(u),
                    };
                    match QualifiedUser::new(
                        u,
                        m,
                        user.data_size,
                        weights.weight(m),
                        user.distance,
                        slack,
                        gain,
                        &env.channel,
                    ) {
                        Ok(q) => qualified.push(q),
                        Err(_) => rec.metrics.disqualified += 1,
                    }
                }
            }
            let plan = plan_round(
                &qualified,
                env.channel.total_bandwidth,
                self.cfg.selection,
                self.cfg.policy,
                num_tiers,
                &env.channel,
            );

            let mut received: Vec<(usize, usize, ParamVector)> = Vec::new();
            let mut record = RoundRecord {
                time: k as f64 * sched.delta_t,
                round: k,
                uploads: 0,
                successes: 0,
                failures: 0,
            };
            for alloc in &plan.allocations {
                let u = alloc.user_id;
                let user = &env.users[u];
                let m = user.tier;
                let local = self.local_model(u, &start_models[m - 1], k / m as u64 - 1);
                let h = self.fading(u, k);
                let ok = decoded(h, alloc.bandwidth, user.distance, &env.channel);
                let p = stp(alloc.bandwidth, user.distance, &env.channel);
                rec.metrics.record_upload(u, p, ok);
                record.uploads += 1;
                if ok {
                    record.successes += 1;
                    received.push((m, u, local));
                } else {
                    record.failures += 1;
                }
            }
            // Deterministic merge order: tier, then user id.
            received.sort_by_key(|&(m, u, _)| (m, u));
            let mut tier_uploads: Vec<Vec<Upload<'_>>> = vec![Vec::new(); num_tiers];
            for (m, u, model) in &received {
                tier_uploads[m - 1].push(Upload { user_id: *u, data_size: env.users[*u].data_size, model });
            }
            let update =
                ttfed_global(&AggregationInput { round: k, tier_uploads, prev_global: &global }, sched)
                    .expect("tier weights are exact");
            rec.metrics.zero_weight_uploads += update.zero_weight_uploads as u64;
            global = update.model;
            rec.aggregated(record, &global);
        }
        rec.finish(global)
    }
}

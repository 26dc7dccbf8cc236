//! Run orchestration: scenario setup, tiering, and the four training loops.
//!
//! Setup is shared by every algorithm. Users are placed uniformly on a disk,
//! the training set is partitioned, and each user's nominal local-round time
//! `t_u = tau_cp + Z / rate(B/U, l(d))` fixes its tier. TT-Fed runs on a
//! fixed `dT` grid ([`ttfed`]); the baselines are driven by a periodic event
//! queue ([`event`]).

mod event;
mod ttfed;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::TierSchedule;
use crate::config::{Algorithm, ConfigError, CpuFrequency, RoundDuration, ScenarioConfig};
use crate::datagen::{partition, DataError, LabeledDataset, PartitionSpec};
use crate::learner::{evaluate, init_params, local_update, Architecture, ParamVector};
use crate::metrics::{EvalRecord, RoundRecord, RunMetrics};
use crate::rng::{stream, Purpose};
use crate::wireless::{comm_delay, compute_delay, path_loss, ChannelParams, ComputeProfile, WirelessError};

pub use event::{periodic_schedule, ScheduledEvent};

/// Number of TT-Fed rounds the default time budget spans.
pub const DEFAULT_BUDGET_ROUNDS: f64 = 300.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Wireless(#[from] WirelessError),
    #[error("user {0} holds no training data")]
    EmptyShard(usize),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("training images have {found} features, the model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("round duration {delta_t} s yields {tiers} tiers, more than the limit {MAX_TIERS}")]
    TooManyTiers { delta_t: f64, tiers: f64 },
}

/// Upper limit on the tier count a round duration may induce.
pub const MAX_TIERS: usize = 100_000;

/// Distances of `num_users` points uniform on a disk of radius `radius`.
pub fn place_users(num_users: usize, radius: f64, seed: u64) -> Vec<f64> {
    (0..num_users)
        .map(|u| {
            let v: f64 = stream(seed, Purpose::Placement, u as u64, 0).random();
            radius * v.sqrt()
        })
        .collect()
}

pub fn cpu_frequencies(cpu: CpuFrequency, num_users: usize, seed: u64) -> Vec<f64> {
    (0..num_users)
        .map(|u| match cpu {
            CpuFrequency::Fixed(f) => f,
            CpuFrequency::Uniform { min, max } if min == max => min,
            CpuFrequency::Uniform { min, max } => {
                stream(seed, Purpose::CpuFrequency, u as u64, 0).random_range(min..=max)
            }
        })
        .collect()
}

/// Tier of a user whose local round takes `round_time`: `ceil(t / dT)`, with
/// times on an exact multiple `j dT` placed in tier `j`.
pub fn tier_index(round_time: f64, delta_t: f64) -> usize {
    let ratio = round_time / delta_t;
    let nearest = ratio.round();
    let tier = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { ratio.ceil() };
    (tier as usize).max(1)
}

/// Groups users by `ceil(t_u / dT)`; the tier count is that of the slowest.
pub fn build_tiers(round_times: &[f64], data_sizes: &[usize], delta_t: f64) -> TierSchedule {
    let slowest = round_times.iter().copied().fold(0.0, f64::max);
    let tier_of: Vec<usize> = round_times.iter().map(|&t| tier_index(t, delta_t)).collect();
    let num_tiers = tier_of.iter().copied().max().unwrap_or(1);
    let mut tier_data = vec![0; num_tiers];
    for (&m, &d) in tier_of.iter().zip(data_sizes) {
        tier_data[m - 1] += d;
    }
    TierSchedule { num_tiers, tier_of, tier_data, delta_t, slowest }
}

/// Static per-user attributes fixed at setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: usize,
    pub distance: f64,
    pub cpu_freq: f64,
    pub data_size: usize,
    pub compute_delay: f64,
    /// Upload time at the equal share `B/U` with mean fading.
    pub nominal_comm_delay: f64,
    pub round_time: f64,
    pub tier: usize,
}

/// Everything a run needs that does not change over simulated time.
#[derive(Debug, Clone)]
pub struct Environment {
    pub users: Vec<UserProfile>,
    pub shards: Vec<Vec<usize>>,
    pub schedule: TierSchedule,
    pub arch: Architecture,
    pub init: ParamVector,
    pub channel: ChannelParams,
    pub time_budget: f64,
    pub substitutions: usize,
}

impl Environment {
    pub fn build(cfg: &ScenarioConfig, train: &LabeledDataset) -> Result<Self, EngineError> {
        cfg.validate()?;
        let arch = Architecture {
            input: train.dim(),
            hidden: cfg.train.hidden_width,
            output: crate::datagen::NUM_CLASSES,
        };
        if train.dim() == 0 {
            return Err(EngineError::Dimension { expected: crate::learner::INPUT_DIM, found: 0 });
        }
        let mut channel = cfg.channel;
        channel.model_size_bits = arch.param_count() as f64 * cfg.bits_per_param;
        channel.validate()?;

        let parts = partition(
            train,
            &PartitionSpec {
                num_users: cfg.num_users,
                zipf_eta: cfg.data.zipf_eta,
                concentration: cfg.data.concentration,
                seed: cfg.seed,
            },
        )?;
        let distances = place_users(cfg.num_users, cfg.radius, cfg.seed);
        let freqs = cpu_frequencies(cfg.cpu, cfg.num_users, cfg.seed);
        let share = channel.total_bandwidth / cfg.num_users as f64;

        let mut users = Vec::with_capacity(cfg.num_users);
        for (u, shard) in parts.shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(EngineError::EmptyShard(u));
            }
            let tau_cp = compute_delay(&ComputeProfile {
                cpu_freq: freqs[u],
                cycles_per_sample: cfg.cycles_per_sample,
                local_epochs: cfg.train.local_epochs,
                dataset_size: shard.len(),
            });
            let gain = path_loss(distances[u], channel.path_loss_exponent);
            let tau_cm = comm_delay(share, gain, &channel)?;
            users.push(UserProfile {
                user_id: u,
                distance: distances[u],
                cpu_freq: freqs[u],
                data_size: shard.len(),
                compute_delay: tau_cp,
                nominal_comm_delay: tau_cm,
                round_time: tau_cp + tau_cm,
                tier: 0,
            });
        }

        let round_times: Vec<f64> = users.iter().map(|u| u.round_time).collect();
        let sizes: Vec<usize> = users.iter().map(|u| u.data_size).collect();
        let slowest = round_times.iter().copied().fold(0.0, f64::max);
        let delta_t = match cfg.delta_t {
            RoundDuration::Seconds(s) => s,
            RoundDuration::FractionOfSlowest(f) => f * slowest,
        };
        let tiers = (slowest / delta_t).ceil();
        if !(tiers <= MAX_TIERS as f64) {
            return Err(EngineError::TooManyTiers { delta_t, tiers });
        }
        let schedule = build_tiers(&round_times, &sizes, delta_t);
        for (user, &m) in users.iter_mut().zip(&schedule.tier_of) {
            user.tier = m;
        }

        Ok(Self {
            users,
            shards: parts.shards.into_iter().map(|s| s.indices).collect(),
            schedule,
            arch,
            init: init_params(&arch, &mut stream(cfg.seed, Purpose::ModelInit, 0, 0)),
            channel,
            time_budget: cfg.time_budget.unwrap_or(DEFAULT_BUDGET_ROUNDS * delta_t),
            substitutions: parts.substitutions,
        })
    }

    /// Mean-fading channel gain `l(d)` of a user.
    pub fn mean_gain(&self, user: usize) -> f64 {
        path_loss(self.users[user].distance, self.channel.path_loss_exponent)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep the global model after every aggregation.
    pub trace_models: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: RunMetrics,
    pub final_model: ParamVector,
    /// Global models after each aggregation, when traced.
    pub models: Vec<ParamVector>,
}

/// Thinned test-set evaluation and optional model tracing.
struct Recorder<'a> {
    arch: Architecture,
    test: &'a LabeledDataset,
    stride: u64,
    planned: u64,
    aggregations: u64,
    metrics: RunMetrics,
    models: Option<Vec<ParamVector>>,
}

impl<'a> Recorder<'a> {
    fn new(sim: &Simulation<'a>, planned: u64, options: RunOptions, initial: &ParamVector) -> Self {
        let max = sim.cfg.max_evaluations.max(1) as u64;
        let mut metrics = RunMetrics::new(sim.cfg.algorithm, sim.env.users.len(), sim.env.time_budget);
        metrics.substitutions = sim.env.substitutions;
        let mut rec = Self {
            arch: sim.env.arch,
            test: sim.test,
            stride: planned.div_ceil(max).max(1),
            planned,
            aggregations: 0,
            metrics,
            models: options.trace_models.then(Vec::new),
        };
        rec.evaluate(0.0, 0, initial);
        rec
    }

    fn evaluate(&mut self, time: f64, round: u64, model: &ParamVector) {
        let eval = evaluate(&self.arch, model, self.test);
        self.metrics.evaluations.push(EvalRecord {
            time,
            round,
            accuracy: eval.accuracy,
            loss: eval.loss,
            counters: self.metrics.counters,
        });
    }

    fn aggregated(&mut self, record: RoundRecord, model: &ParamVector) {
        self.aggregations += 1;
        self.metrics.rounds.push(record);
        if let Some(models) = self.models.as_mut() {
            models.push(model.clone());
        }
        if self.aggregations.is_multiple_of(self.stride) || self.aggregations == self.planned {
            self.evaluate(record.time, record.round, model);
        }
    }

    fn finish(self, final_model: ParamVector) -> RunResult {
        RunResult { metrics: self.metrics, final_model, models: self.models.unwrap_or_default() }
    }
}

/// A prepared scenario bound to its data.
pub struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    env: Environment,
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
}

impl<'a> Simulation<'a> {
    pub fn new(
        cfg: &'a ScenarioConfig,
        train: &'a LabeledDataset,
        test: &'a LabeledDataset,
    ) -> Result<Self, EngineError> {
        if test.is_empty() {
            return Err(EngineError::EmptyTestSet);
        }
        if test.dim() != train.dim() {
            return Err(EngineError::Dimension { expected: train.dim(), found: test.dim() });
        }
        Ok(Self { cfg, env: Environment::build(cfg, train)?, train, test })
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn config(&self) -> &ScenarioConfig {
        self.cfg
    }

    pub fn run(&self, options: RunOptions) -> RunResult {
        match self.cfg.algorithm {
            Algorithm::TtFed => self.run_ttfed(options),
            Algorithm::FedAvg => self.run_fedavg(options),
            Algorithm::FedAsync => self.run_fedasync(options),
            Algorithm::FedAt => self.run_fedat(options),
        }
    }

    /// The `local_round`-th local update of `user`, started from `start`.
    fn local_model(&self, user: usize, start: &ParamVector, local_round: u64) -> ParamVector {
        let mut rng = stream(self.cfg.seed, Purpose::LocalUpdate, user as u64, local_round);
        local_update(&self.env.arch, start, self.train, &self.env.shards[user], &self.cfg.train, &mut rng)
    }

    /// Fading power `|h|²` of `user` for its `counter`-th channel use.
    fn fading(&self, user: usize, counter: u64) -> f64 {
        stream(self.cfg.seed, Purpose::Fading, user as u64, counter).sample(Exp1)
    }

    fn max_rounds(&self) -> u64 {
        self.cfg.max_rounds.unwrap_or(u64::MAX)
    }
}

/// Builds the scenario and runs its configured algorithm.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    options: RunOptions,
) -> Result<RunResult, EngineError> {
    Ok(Simulation::new(cfg, train, test)?.run(options))
}

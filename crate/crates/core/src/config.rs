//! Scenario configuration and its flat `section.key = value` text format.
//!
//! Lines are `key = value`; `#` starts a comment. Keys ending in `_db` or
//! `_dbm_per_hz` are converted to linear units on load. Every key has a
//! default, so an empty file describes the reference scenario.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{SchedulingPolicy, SelectionRule};
use crate::datagen::Concentration;
use crate::learner::TrainConfig;
use crate::wireless::{db_to_linear, dbm_per_hz_to_watts, ChannelParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl fmt::Display) -> Self {
        Self::InvalidValue { key: key.to_string(), reason: reason.to_string() }
    }

    /// The offending key, when the error concerns one.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::UnknownKey(k) | Self::InvalidValue { key: k, .. } => Some(k),
            Self::Syntax { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    TtFed,
    FedAvg,
    FedAsync,
    FedAt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::TtFed, Self::FedAvg, Self::FedAsync, Self::FedAt];

    pub fn name(self) -> &'static str {
        match self {
            Self::TtFed => "ttfed",
            Self::FedAvg => "fedavg",
            Self::FedAsync => "fedasync",
            Self::FedAt => "fedat",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected ttfed, fedavg, fedasync or fedat)"))
    }
}

fn policy_name(p: SchedulingPolicy) -> &'static str {
    match p {
        SchedulingPolicy::Proposed => "proposed",
        SchedulingPolicy::EqualBandwidth => "equal_bandwidth",
        SchedulingPolicy::EqualWeight => "equal_weight",
    }
}

fn parse_policy(s: &str) -> Result<SchedulingPolicy, String> {
    match s.replace('-', "_").as_str() {
        "proposed" => Ok(SchedulingPolicy::Proposed),
        "equal_bandwidth" => Ok(SchedulingPolicy::EqualBandwidth),
        "equal_weight" => Ok(SchedulingPolicy::EqualWeight),
        _ => Err(format!("unknown policy `{s}` (expected proposed, equal_bandwidth or equal_weight)")),
    }
}

/// Channel figure the scheduler uses when computing the capacity coefficient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulingChannel {
    /// Path loss only, fading at its mean `|h|² = 1`.
    #[default]
    Mean,
    /// The round's actual fading realization.
    Realized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CpuFrequency {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RoundDuration {
    Seconds(f64),
    /// Fraction of the slowest user's local-round time.
    FractionOfSlowest(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Directory holding the four IDX files.
    pub dir: PathBuf,
    /// Training subset: the first this-many samples of each class.
    pub train_per_class: usize,
    pub test_limit: Option<usize>,
    pub zipf_eta: f64,
    pub concentration: Concentration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub algorithm: Algorithm,
    pub num_users: usize,
    pub radius: f64,
    pub seed: u64,
    pub delta_t: RoundDuration,
    pub psi: f64,
    /// Simulated seconds; `None` means 300 TT-Fed rounds.
    pub time_budget: Option<f64>,
    pub max_rounds: Option<u64>,
    pub max_evaluations: usize,
    pub policy: SchedulingPolicy,
    pub selection: SelectionRule,
    pub scheduling_channel: SchedulingChannel,
    pub targets: Vec<f64>,
    pub channel: ChannelParams,
    pub bits_per_param: f64,
    pub cpu: CpuFrequency,
    pub cycles_per_sample: f64,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::TtFed,
            num_users: 20,
            radius: 600.0,
            seed: 0,
            delta_t: RoundDuration::FractionOfSlowest(0.6),
            psi: 0.5,
            time_budget: None,
            max_rounds: None,
            max_evaluations: 2000,
            policy: SchedulingPolicy::Proposed,
            selection: SelectionRule::BreakOnMisfit,
            scheduling_channel: SchedulingChannel::Mean,
            targets: vec![0.5, 0.6, 0.7, 0.8],
            channel: ChannelParams::reference(0.0),
            bits_per_param: 16.0,
            cpu: CpuFrequency::Fixed(1e9),
            cycles_per_sample: 5e5,
            data: DataConfig {
                dir: PathBuf::from("data/mnist"),
                train_per_class: 250,
                test_limit: None,
                zipf_eta: 0.0,
                concentration: Concentration::Infinite,
            },
            train: TrainConfig::default(),
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::invalid(key, e))
}

fn positive(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = num(key, value)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, format!("must be positive and finite, got {v}")))
    }
}

fn nonzero(key: &str, value: &str) -> Result<usize, ConfigError> {
    let v: usize = num(key, value)?;
    if v == 0 {
        Err(ConfigError::invalid(key, "must be at least 1"))
    } else {
        Ok(v)
    }
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::invalid(key, format!("expected true or false, got `{value}`"))),
    }
}

fn optional(value: &str) -> bool {
    matches!(value, "none" | "auto" | "")
}

/// Splits `key = value` lines, skipping blanks and comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

impl ScenarioConfig {
    /// Defaults overlaid with the contents of a config file.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (key, value) in parse_pairs(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<Self, ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) =
                o.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: o.to_string() })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Sets one key. Validation of cross-field constraints is deferred to
    /// [`ScenarioConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::invalid(key, reason);
        match key {
            "sim.algorithm" => self.algorithm = value.parse().map_err(bad)?,
            "sim.num_users" => self.num_users = nonzero(key, value)?,
            "sim.radius_m" => self.radius = positive(key, value)?,
            "sim.seed" => self.seed = num(key, value)?,
            "sim.delta_t_s" => self.delta_t = RoundDuration::Seconds(positive(key, value)?),
            "sim.delta_t_fraction" => self.delta_t = RoundDuration::FractionOfSlowest(positive(key, value)?),
            "sim.psi" => self.psi = num(key, value)?,
            "sim.time_budget_s" => {
                self.time_budget = if optional(value) { None } else { Some(positive(key, value)?) }
            }
            "sim.max_rounds" => self.max_rounds = if optional(value) { None } else { Some(num(key, value)?) },
            "sim.max_evaluations" => self.max_evaluations = nonzero(key, value)?,
            "sim.policy" => self.policy = parse_policy(value).map_err(bad)?,
            "sim.greedy_skip" => {
                self.selection = if boolean(key, value)? {
                    SelectionRule::SkipMisfit
                } else {
                    SelectionRule::BreakOnMisfit
                }
            }
            "sim.scheduling_channel" => {
                self.scheduling_channel = match value {
                    "mean" => SchedulingChannel::Mean,
                    "realized" => SchedulingChannel::Realized,
                    _ => return Err(bad(format!("expected mean or realized, got `{value}`"))),
                }
            }
            "sim.targets" => {
                self.targets =
                    value.split(',').map(|t| num::<f64>(key, t.trim())).collect::<Result<_, _>>()?
            }
            "channel.path_loss_exponent" => self.channel.path_loss_exponent = num(key, value)?,
            "channel.noise_psd_dbm_per_hz" => self.channel.noise_psd = dbm_per_hz_to_watts(num(key, value)?),
            "channel.tx_power_w" => self.channel.tx_power = positive(key, value)?,
            "channel.snr_threshold_db" => self.channel.snr_threshold = db_to_linear(num(key, value)?),
            "channel.total_bandwidth_hz" => self.channel.total_bandwidth = positive(key, value)?,
            "channel.bits_per_param" => self.bits_per_param = positive(key, value)?,
            "compute.cpu_freq_hz" => self.cpu = CpuFrequency::Fixed(positive(key, value)?),
            "compute.cpu_freq_range_hz" => {
                let (lo, hi) =
                    value.split_once(',').ok_or_else(|| bad(format!("expected `min,max`, got `{value}`")))?;
                self.cpu =
                    CpuFrequency::Uniform { min: positive(key, lo.trim())?, max: positive(key, hi.trim())? };
            }
            "compute.cycles_per_sample" => self.cycles_per_sample = positive(key, value)?,
            "data.dir" => self.data.dir = PathBuf::from(value),
            "data.train_per_class" => self.data.train_per_class = nonzero(key, value)?,
            "data.test_limit" => {
                self.data.test_limit = if optional(value) { None } else { Some(nonzero(key, value)?) }
            }
            "data.zipf_eta" => self.data.zipf_eta = num(key, value)?,
            "data.dirichlet_theta" => self.data.concentration = value.parse().map_err(bad)?,
            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.local_epochs" => self.train.local_epochs = num(key, value)?,
            "train.batch_size" => self.train.batch_size = nonzero(key, value)?,
            "train.hidden_width" => self.train.hidden_width = nonzero(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be positive and finite, got {v}")))
            }
        };
        if self.num_users == 0 {
            return Err(ConfigError::invalid("sim.num_users", "must be at least 1"));
        }
        positive("sim.radius_m", self.radius)?;
        match self.delta_t {
            RoundDuration::Seconds(s) => positive("sim.delta_t_s", s)?,
            RoundDuration::FractionOfSlowest(f) => positive("sim.delta_t_fraction", f)?,
        }
        if let Some(b) = self.time_budget {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(ConfigError::invalid("sim.time_budget_s", "must be non-negative"));
            }
        }
        positive("channel.bits_per_param", self.bits_per_param)?;
        positive("compute.cycles_per_sample", self.cycles_per_sample)?;
        match self.cpu {
            CpuFrequency::Fixed(f) => positive("compute.cpu_freq_hz", f)?,
            CpuFrequency::Uniform { min, .. } => positive("compute.cpu_freq_range_hz", min)?,
        }
        if self.train.batch_size == 0 {
            return Err(ConfigError::invalid("train.batch_size", "must be at least 1"));
        }
        if self.train.hidden_width == 0 {
            return Err(ConfigError::invalid("train.hidden_width", "must be at least 1"));
        }
        if !(self.psi > 0.0 && self.psi < 1.0) {
            return Err(ConfigError::invalid("sim.psi", format!("must lie in (0, 1), got {}", self.psi)));
        }
        if !(self.data.zipf_eta >= 0.0) {
            return Err(ConfigError::invalid("data.zipf_eta", "must be non-negative"));
        }
        if !(self.train.learning_rate >= 0.0 && self.train.learning_rate.is_finite()) {
            return Err(ConfigError::invalid("train.learning_rate", "must be non-negative"));
        }
        if self.train.local_epochs == 0 {
            return Err(ConfigError::invalid("train.local_epochs", "must be at least 1"));
        }
        if let CpuFrequency::Uniform { min, max } = self.cpu {
            if min > max {
                return Err(ConfigError::invalid("compute.cpu_freq_range_hz", "min exceeds max"));
            }
        }
        if self.targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(ConfigError::invalid("sim.targets", "accuracies must lie in [0, 1]"));
        }
        let mut channel = self.channel;
        channel.model_size_bits = 1.0;
        channel.validate().map_err(|e| {
            let key = match e {
                crate::wireless::WirelessError::InvalidParam { field, .. } => match field {
                    "path_loss_exponent" => "channel.path_loss_exponent",
                    "noise_psd" => "channel.noise_psd_dbm_per_hz",
                    "tx_power" => "channel.tx_power_w",
                    "snr_threshold" => "channel.snr_threshold_db",
                    _ => "channel.total_bandwidth_hz",
                },
                _ => "channel",
            };
            ConfigError::invalid(key, e)
        })?;
        Ok(())
    }

    /// The config as `key = value` lines that [`ScenarioConfig::from_text`]
    /// reads back to an identical value.
    pub fn to_text(&self) -> String {
        let mut out = Vec::new();
        let mut put = |k: &str, v: String| out.push(format!("{k} = {v}"));
        put("sim.algorithm", self.algorithm.to_string());
        put("sim.num_users", self.num_users.to_string());
        put("sim.radius_m", fmt_f64(self.radius));
        put("sim.seed", self.seed.to_string());
        match self.delta_t {
            RoundDuration::Seconds(s) => put("sim.delta_t_s", fmt_f64(s)),
            RoundDuration::FractionOfSlowest(f) => put("sim.delta_t_fraction", fmt_f64(f)),
        }
        put("sim.psi", fmt_f64(self.psi));
        put("sim.time_budget_s", self.time_budget.map_or("auto".into(), fmt_f64));
        put("sim.max_rounds", self.max_rounds.map_or("none".into(), |r| r.to_string()));
        put("sim.max_evaluations", self.max_evaluations.to_string());
        put("sim.policy", policy_name(self.policy).to_string());
        put("sim.greedy_skip", (self.selection == SelectionRule::SkipMisfit).to_string());
        put(
            "sim.scheduling_channel",
            match self.scheduling_channel {
                SchedulingChannel::Mean => "mean",
                SchedulingChannel::Realized => "realized",
            }
            .to_string(),
        );
        put("sim.targets", self.targets.iter().map(|t| fmt_f64(*t)).collect::<Vec<_>>().join(","));
        put("channel.path_loss_exponent", fmt_f64(self.channel.path_loss_exponent));
        put("channel.noise_psd_dbm_per_hz", fmt_f64(10.0 * self.channel.noise_psd.log10() + 30.0));
        put("channel.tx_power_w", fmt_f64(self.channel.tx_power));
        put("channel.snr_threshold_db", fmt_f64(10.0 * self.channel.snr_threshold.log10()));
        put("channel.total_bandwidth_hz", fmt_f64(self.channel.total_bandwidth));
        put("channel.bits_per_param", fmt_f64(self.bits_per_param));
        match self.cpu {
            CpuFrequency::Fixed(f) => put("compute.cpu_freq_hz", fmt_f64(f)),
            CpuFrequency::Uniform { min, max } => {
                put("compute.cpu_freq_range_hz", format!("{},{}", fmt_f64(min), fmt_f64(max)))
            }
        }
        put("compute.cycles_per_sample", fmt_f64(self.cycles_per_sample));
        put("data.dir", self.data.dir.display().to_string());
        put("data.train_per_class", self.data.train_per_class.to_string());
        put("data.test_limit", self.data.test_limit.map_or("none".into(), |n| n.to_string()));
        put("data.zipf_eta", fmt_f64(self.data.zipf_eta));
        put("data.dirichlet_theta", self.data.concentration.to_string());
        put("train.learning_rate", fmt_f64(self.train.learning_rate));
        put("train.local_epochs", self.train.local_epochs.to_string());
        put("train.batch_size", self.train.batch_size.to_string());
        put("train.hidden_width", self.train.hidden_width.to_string());
        out.join("\n") + "\n"
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

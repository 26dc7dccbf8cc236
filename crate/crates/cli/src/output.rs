//! Metrics CSV, JSON summary and run manifest, all written atomically.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use ttfed_core::config::ScenarioConfig;
use ttfed_core::metrics::{count_comm, RunMetrics};

use crate::error::CliError;

pub const CSV_HEADER: [&str; 10] = [
    "time_s",
    "round",
    "algorithm",
    "accuracy",
    "loss",
    "uplink_msgs",
    "downlink_broadcasts",
    "downlink_unicasts",
    "success_users",
    "failed_users",
];

/// SHA-256 of the canonical text form of `cfg`.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    format!("{:x}", Sha256::digest(cfg.to_text().as_bytes()))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Runtime(format!("i/o: {}", e.error)))?;
    Ok(())
}

/// One CSV row per evaluation; message and upload counts are cumulative.
pub fn metrics_csv(metrics: &RunMetrics) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Runtime(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    let algorithm = metrics.algorithm.name();
    for e in &metrics.evaluations {
        let c = e.counters;
        w.write_record([
            e.time.to_string(),
            e.round.to_string(),
            algorithm.to_string(),
            e.accuracy.to_string(),
            e.loss.to_string(),
            c.uplinks.to_string(),
            c.broadcasts.to_string(),
            c.unicasts.to_string(),
            c.successes.to_string(),
            c.failures.to_string(),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))
}

#[derive(Debug, Serialize)]
pub struct TargetSummary {
    pub target: f64,
    pub time_s: Option<f64>,
    pub messages: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub algorithm: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub num_users: usize,
    pub num_tiers: usize,
    pub delta_t_s: f64,
    pub time_budget_s: f64,
    pub aggregations: usize,
    pub final_accuracy: Option<f64>,
    pub converged_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub uplink_msgs: u64,
    pub downlink_broadcasts: u64,
    pub downlink_unicasts: u64,
    pub successful_uploads: u64,
    pub failed_uploads: u64,
    pub zero_weight_uploads: u64,
    pub disqualified: u64,
    pub substitutions: usize,
    pub targets: Vec<TargetSummary>,
}

impl RunSummary {
    pub fn new(
        cfg: &ScenarioConfig,
        hash: String,
        num_tiers: usize,
        delta_t: f64,
        metrics: &RunMetrics,
    ) -> Self {
        let c = metrics.counters;
        Self {
            algorithm: metrics.algorithm.name(),
            seed: cfg.seed,
            config_hash: hash,
            num_users: cfg.num_users,
            num_tiers,
            delta_t_s: delta_t,
            time_budget_s: metrics.time_budget,
            aggregations: metrics.rounds.len(),
            final_accuracy: metrics.final_accuracy(),
            converged_accuracy: metrics.converged_accuracy(),
            best_accuracy: metrics.best_accuracy(),
            uplink_msgs: c.uplinks,
            downlink_broadcasts: c.broadcasts,
            downlink_unicasts: c.unicasts,
            successful_uploads: c.successes,
            failed_uploads: c.failures,
            zero_weight_uploads: metrics.zero_weight_uploads,
            disqualified: metrics.disqualified,
            substitutions: metrics.substitutions,
            targets: count_comm(metrics, &cfg.targets)
                .into_iter()
                .map(|t| TargetSummary { target: t.target, time_s: t.time, messages: t.messages })
                .collect(),
        }
    }
}

/// Output files of one run, relative to the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub algorithm: &'static str,
    pub config_hash: String,
    pub metrics_csv: String,
    pub summary_json: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_value: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    pub seeds: Vec<u64>,
    pub runs: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn new(command: &'static str, config_hash: String) -> Self {
        Self {
            tool: "ttfed",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash,
            axis: None,
            seeds: Vec::new(),
            runs: Vec::new(),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(format!("json: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// File stem shared by a run's CSV and summary.
pub fn run_stem(algorithm: &str, seed: u64, hash: &str) -> String {
    format!("{algorithm}_seed{seed}_{}", &hash[..12])
}

//! `ttfed run`: one scenario, one seed.

use std::path::Path;

use ttfed_core::config::ScenarioConfig;
use ttfed_core::datagen::{load_mnist_dir, LabeledDataset};
use ttfed_core::engine::{RunOptions, Simulation};

use crate::error::CliError;
use crate::output::{self, ManifestEntry, RunManifest, RunSummary};

/// Defaults, then the config file, then each override in order.
pub fn load_config(config: Option<&Path>, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let base = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("config: {}: {e}", path.display())))?;
            ScenarioConfig::from_text(&text)?
        }
        None => ScenarioConfig::default(),
    };
    Ok(base.with_overrides(overrides)?)
}

pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_data(cfg: &ScenarioConfig) -> Result<Datasets, CliError> {
    let (train, test) = load_mnist_dir(&cfg.data.dir, cfg.data.train_per_class, cfg.data.test_limit)
        .map_err(|e| CliError::Runtime(format!("data: {}: {e}", cfg.data.dir.display())))?;
    Ok(Datasets { train, test })
}

/// Runs `cfg` and writes `<stem>.csv` and `<stem>.json` under `out_dir`.
pub fn run_and_write(
    cfg: &ScenarioConfig,
    data: &Datasets,
    out_dir: &Path,
) -> Result<(ManifestEntry, RunSummary), CliError> {
    let sim = Simulation::new(cfg, &data.train, &data.test)?;
    let env = sim.environment();
    let (num_tiers, delta_t) = (env.schedule.num_tiers, env.schedule.delta_t);
    let result = sim.run(RunOptions::default());

    let hash = output::config_hash(cfg);
    let algorithm = cfg.algorithm.name();
    let stem = output::run_stem(algorithm, cfg.seed, &hash);
    let csv_name = format!("{stem}.csv");
    let json_name = format!("{stem}.json");
    let summary = RunSummary::new(cfg, hash.clone(), num_tiers, delta_t, &result.metrics);
    output::write_atomic(&out_dir.join(&csv_name), &output::metrics_csv(&result.metrics)?)?;
    output::write_atomic(&out_dir.join(&json_name), &output::to_json(&summary)?)?;
    let entry = ManifestEntry {
        seed: cfg.seed,
        algorithm,
        config_hash: hash,
        metrics_csv: csv_name,
        summary_json: json_name,
        axis_value: None,
    };
    Ok((entry, summary))
}

pub fn cmd_run(
    config: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let mut cfg = load_config(config, overrides)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data = load_data(&cfg)?;
    let (entry, summary) = run_and_write(&cfg, &data, out_dir)?;

    let mut manifest = RunManifest::new("run", entry.config_hash.clone());
    manifest.seeds.push(cfg.seed);
    println!("metrics: {}", out_dir.join(&entry.metrics_csv).display());
    println!("summary: {}", out_dir.join(&entry.summary_json).display());
    manifest.runs.push(entry);
    output::write_atomic(&out_dir.join("manifest.json"), &output::to_json(&manifest)?)?;

    let fmt = |a: Option<f64>| a.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} seed {}: {} tiers, {} aggregations, final accuracy {}, converged {}, {} messages",
        summary.algorithm,
        summary.seed,
        summary.num_tiers,
        summary.aggregations,
        fmt(summary.final_accuracy),
        fmt(summary.converged_accuracy),
        summary.uplink_msgs + summary.downlink_broadcasts + summary.downlink_unicasts,
    );
    Ok(())
}

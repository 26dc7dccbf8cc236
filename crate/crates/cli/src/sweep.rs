//! `ttfed sweep`: a grid over one parameter, several seeds and algorithms.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ttfed_core::config::{Algorithm, ScenarioConfig};

use crate::error::CliError;
use crate::output::{self, ManifestEntry, RunManifest, RunSummary};
use crate::run::{load_config, load_data, run_and_write, Datasets};

pub struct SweepRequest<'a> {
    pub config: Option<&'a Path>,
    pub overrides: &'a [String],
    pub out_dir: &'a Path,
    pub axis: &'a str,
    pub seeds: &'a str,
    pub algorithms: Option<&'a str>,
    pub jobs: usize,
}

/// Short axis names and the config keys they stand for.
const ALIASES: [(&str, &str); 4] = [
    ("delta_t_fraction", "sim.delta_t_fraction"),
    ("theta", "data.dirichlet_theta"),
    ("eta", "data.zipf_eta"),
    ("policy", "sim.policy"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_axis(spec: &str) -> Result<Axis, CliError> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("axis: expected `NAME=v1,v2,...`, got `{spec}`")))?;
    let name = name.trim();
    let key = ALIASES.iter().find(|(alias, _)| *alias == name).map_or(name, |(_, key)| *key);
    if !key.contains('.') {
        return Err(CliError::Config(format!("axis: unknown parameter `{name}`")));
    }
    let values: Vec<String> =
        values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("axis: `{name}` has no values")));
    }
    Ok(Axis { key: key.to_string(), values })
}

pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Vec<u64> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Config(format!("seeds: `{s}` is not an unsigned integer"))))
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::Config("seeds: no seeds given".into()));
    }
    Ok(seeds)
}

fn parse_algorithms(spec: &str) -> Result<Vec<Algorithm>, CliError> {
    let algs: Vec<Algorithm> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| CliError::Config(format!("algorithms: {e}"))))
        .collect::<Result<_, _>>()?;
    if algs.is_empty() {
        return Err(CliError::Config("algorithms: none given".into()));
    }
    Ok(algs)
}

struct Job {
    point: usize,
    data: usize,
    cfg: ScenarioConfig,
}

fn data_key(cfg: &ScenarioConfig) -> (PathBuf, usize, Option<usize>) {
    (cfg.data.dir.clone(), cfg.data.train_per_class, cfg.data.test_limit)
}

pub fn cmd_sweep(req: &SweepRequest) -> Result<(), CliError> {
    let axis = parse_axis(req.axis)?;
    let seeds = parse_seeds(req.seeds)?;
    let base = load_config(req.config, req.overrides)?;
    let algorithms = match req.algorithms {
        Some(spec) => parse_algorithms(spec)?,
        None => vec![base.algorithm],
    };

    // Build and validate every configuration before running any of them.
    let mut sources: Vec<ScenarioConfig> = Vec::new();
    let mut jobs = Vec::new();
    for (point, value) in axis.values.iter().enumerate() {
        let at_point = base.clone().with_overrides(&[format!("{}={value}", axis.key)])?;
        let key = data_key(&at_point);
        let data = sources.iter().position(|c| data_key(c) == key).unwrap_or_else(|| {
            sources.push(at_point.clone());
            sources.len() - 1
        });
        for &seed in &seeds {
            for &algorithm in &algorithms {
                let mut cfg = at_point.clone();
                cfg.seed = seed;
                cfg.algorithm = algorithm;
                jobs.push(Job { point, data, cfg });
            }
        }
    }
    let datasets: Vec<Datasets> = sources.iter().map(load_data).collect::<Result<_, _>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let results: Vec<(ManifestEntry, RunSummary)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let (mut entry, summary) = run_and_write(&job.cfg, &datasets[job.data], req.out_dir)?;
                entry.axis_value = Some(axis.values[job.point].clone());
                Ok((entry, summary))
            })
            .collect::<Result<_, CliError>>()
    })?;

    let mut manifest = RunManifest::new("sweep", output::config_hash(&base));
    manifest.axis = Some(axis.key.clone());
    manifest.seeds = seeds;
    let table = summarize(&axis, &algorithms, &jobs, &results);
    manifest.runs = results.into_iter().map(|(entry, _)| entry).collect();
    output::write_atomic(&req.out_dir.join("manifest.json"), &output::to_json(&manifest)?)?;
    output::write_atomic(&req.out_dir.join("sweep_summary.csv"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> String {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        String::new()
    } else {
        format!("{:.6}", v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Seed-averaged accuracies for each axis value and algorithm, as CSV.
fn summarize(
    axis: &Axis,
    algorithms: &[Algorithm],
    jobs: &[Job],
    results: &[(ManifestEntry, RunSummary)],
) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        axis.key.as_str(),
        "algorithm",
        "num_tiers",
        "runs",
        "mean_final_accuracy",
        "mean_converged_accuracy",
        "mean_best_accuracy",
    ];
    w.write_record(header).expect("in-memory csv");
    for (point, value) in axis.values.iter().enumerate() {
        for &alg in algorithms {
            let group: Vec<&RunSummary> = jobs
                .iter()
                .zip(results)
                .filter(|(j, _)| j.point == point && j.cfg.algorithm == alg)
                .map(|(_, (_, s))| s)
                .collect();
            let mut tiers: Vec<usize> = group.iter().map(|s| s.num_tiers).collect();
            tiers.sort_unstable();
            tiers.dedup();
            let tiers = tiers.iter().map(usize::to_string).collect::<Vec<_>>().join("/");
            w.write_record([
                value.clone(),
                alg.name().to_string(),
                tiers,
                group.len().to_string(),
                mean(group.iter().map(|s| s.final_accuracy)),
                mean(group.iter().map(|s| s.converged_accuracy)),
                mean(group.iter().map(|s| s.best_accuracy)),
            ])
            .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
}

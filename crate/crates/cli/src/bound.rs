//! `ttfed bound`: the convergence bound for a file of constants.

use std::path::Path;

use ttfed_core::bound::{check_convergence_conditions, convergence_bound, BoundConstants};
use ttfed_core::config::parse_pairs;

use crate::error::CliError;

fn invalid(key: &str, value: &str) -> CliError {
    CliError::Config(format!("constants: `{key}` has invalid value `{value}`"))
}

fn number(key: &str, value: &str) -> Result<f64, CliError> {
    value.parse().map_err(|_| invalid(key, value))
}

/// Reads `key = value` lines. `failure_fractions` is a comma list; a single
/// value applies to every tier when `num_tiers` is given.
pub fn parse_constants(text: &str) -> Result<BoundConstants, CliError> {
    let mut c = BoundConstants {
        l: f64::NAN,
        mu: f64::NAN,
        chi: 0.0,
        nu: 0.0,
        delta: 0.0,
        epsilon: 0.0,
        beta: 0.0,
        phi: 0.0,
        xi: None,
        initial_gap: f64::NAN,
        failure_fractions: Vec::new(),
        num_tiers: 0,
    };
    let mut seen = Vec::new();
    for (key, value) in parse_pairs(text)? {
        let v = value.as_str();
        match key.as_str() {
            "l" => c.l = number(&key, v)?,
            "mu" => c.mu = number(&key, v)?,
            "chi" => c.chi = number(&key, v)?,
            "nu" => c.nu = number(&key, v)?,
            "delta" => c.delta = number(&key, v)?,
            "epsilon" => c.epsilon = number(&key, v)?,
            "beta" => c.beta = number(&key, v)?,
            "phi" => c.phi = number(&key, v)?,
            "xi" => c.xi = Some(number(&key, v)?),
            "initial_gap" => c.initial_gap = number(&key, v)?,
            "failure_fractions" => {
                c.failure_fractions =
                    v.split(',').map(|f| number(&key, f.trim())).collect::<Result<_, _>>()?
            }
            "num_tiers" => c.num_tiers = v.parse().map_err(|_| invalid(&key, v))?,
            _ => return Err(CliError::Config(format!("constants: unknown key `{key}`"))),
        }
        seen.push(key);
    }
    for required in ["l", "mu", "initial_gap", "failure_fractions"] {
        if !seen.iter().any(|k| k == required) {
            return Err(CliError::Config(format!("constants: missing `{required}`")));
        }
    }
    if c.num_tiers == 0 && !seen.iter().any(|k| k == "num_tiers") {
        c.num_tiers = c.failure_fractions.len();
    } else if c.failure_fractions.len() == 1 && c.num_tiers > 1 {
        c.failure_fractions = vec![c.failure_fractions[0]; c.num_tiers];
    }
    Ok(c)
}

pub fn parse_rounds(spec: &str) -> Result<Vec<u64>, CliError> {
    let rounds: Vec<u64> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Config(format!("rounds: `{s}` is not an unsigned integer"))))
        .collect::<Result<_, _>>()?;
    if rounds.is_empty() {
        return Err(CliError::Config("rounds: none given".into()));
    }
    Ok(rounds)
}

/// Header, then one `K,bound,conditions` row per round count.
pub fn bound_table(c: &BoundConstants, rounds: &[u64]) -> Result<String, CliError> {
    let check = check_convergence_conditions(c);
    let verdict = if check.holds {
        "ok".to_string()
    } else {
        let names: Vec<String> = check.failures.iter().map(ToString::to_string).collect();
        format!("warning: violates {}", names.join(" and "))
    };
    let mut out = String::from("K,bound,conditions\n");
    for &k in rounds {
        let value = convergence_bound(c, k)?;
        out.push_str(&format!("{k},{value:e},{verdict}\n"));
    }
    Ok(out)
}

pub fn cmd_bound(constants: &Path, rounds: &str) -> Result<(), CliError> {
    let text = std::fs::read_to_string(constants)
        .map_err(|e| CliError::Config(format!("constants: {}: {e}", constants.display())))?;
    let c = parse_constants(&text)?;
    let rounds = parse_rounds(rounds)?;
    let table = bound_table(&c, &rounds)?;
    if !check_convergence_conditions(&c).holds {
        eprintln!("warning: the sufficient convergence conditions do not hold; the bound may not decrease");
    }
    print!("{table}");
    Ok(())
}

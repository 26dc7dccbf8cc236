//! Server-side merge rules: FedAvg, FedAsync, FedAT and the two-stage
//! TT-Fed aggregation with its exact integer tier weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::ParamVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("no uploads to aggregate")]
    Empty,
    #[error("total data size is zero")]
    ZeroData,
    #[error("mixing weight must lie in (0, 1), got {0}")]
    MixingOutOfRange(f64),
    #[error("tier weights sum to {0}, not 1")]
    WeightSum(f64),
    #[error("{models} tier models but {weights} weights")]
    LengthMismatch { models: usize, weights: usize },
    #[error("tier weights are undefined: no tier has updated yet")]
    UndefinedWeights,
}

/// One received local model.
#[derive(Debug, Clone, Copy)]
pub struct Upload<'a> {
    pub user_id: usize,
    pub data_size: usize,
    pub model: &'a ParamVector,
}

/// `sum_u D_u w_u / sum_u D_u`, accumulated in upload order.
///
/// Weights are normalised before accumulation, so a single upload is
/// returned bit-for-bit.
pub fn weighted_mean(uploads: &[Upload<'_>]) -> Result<ParamVector, AggregationError> {
    let first = uploads.first().ok_or(AggregationError::Empty)?;
    let total: usize = uploads.iter().map(|u| u.data_size).sum();
    if total == 0 {
        return Err(AggregationError::ZeroData);
    }
    let total = total as f64;
    let mut out = first.model.scaled(first.data_size as f64 / total);
    for u in &uploads[1..] {
        out.add_scaled(u.data_size as f64 / total, u.model);
    }
    Ok(out)
}

pub fn fedavg_aggregate(uploads: &[Upload<'_>]) -> Result<ParamVector, AggregationError> {
    weighted_mean(uploads)
}

/// `psi * w_new + (1 - psi) * w_prev`.
pub fn fedasync_aggregate(
    prev: &ParamVector,
    new: &ParamVector,
    psi: f64,
) -> Result<ParamVector, AggregationError> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(AggregationError::MixingOutOfRange(psi));
    }
    let mut out = prev.scaled(1.0 - psi);
    out.add_scaled(psi, new);
    Ok(out)
}

/// `sum_m alpha_m w_m` over persistent tier models.
pub fn fedat_aggregate(
    tier_models: &[ParamVector],
    weights: &[f64],
) -> Result<ParamVector, AggregationError> {
    if tier_models.len() != weights.len() {
        return Err(AggregationError::LengthMismatch { models: tier_models.len(), weights: weights.len() });
    }
    if tier_models.is_empty() {
        return Err(AggregationError::Empty);
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
        return Err(AggregationError::WeightSum(sum));
    }
    let mut terms = tier_models.iter().zip(weights).filter(|(_, &a)| a != 0.0);
    let (m0, &a0) = terms.next().ok_or(AggregationError::WeightSum(sum))?;
    let mut out = if a0 == 1.0 { m0.clone() } else { m0.scaled(a0) };
    for (m, &a) in terms {
        out.add_scaled(a, m);
    }
    Ok(out)
}

/// Tier weights as exact integer ratios `numerators[m-1] / denominator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierWeights {
    pub numerators: Vec<u64>,
    pub denominator: u64,
}

impl TierWeights {
    pub fn num_tiers(&self) -> usize {
        self.numerators.len()
    }

    /// Weight of tier `m` (1-based).
    pub fn weight(&self, tier: usize) -> f64 {
        self.numerators[tier - 1] as f64 / self.denominator as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (1..=self.num_tiers()).map(|m| self.weight(m)).collect()
    }

    pub fn numerator_sum(&self) -> u64 {
        self.numerators.iter().sum()
    }
}

/// Time-swapped weights: tier `m` gets the update count of tier `M + 1 - m`,
/// i.e. `floor(k / (M + 1 - m)) / sum_j floor(k / j)`.
pub fn ttfed_tier_weights(round: u64, num_tiers: usize) -> Result<TierWeights, AggregationError> {
    let counts: Vec<u64> = (1..=num_tiers as u64).map(|m| round / m).collect();
    swapped_count_weights(&counts)
}

/// Swaps per-tier update counts end for end and normalises them.
pub fn swapped_count_weights(counts: &[u64]) -> Result<TierWeights, AggregationError> {
    let denominator: u64 = counts.iter().sum();
    if denominator == 0 {
        return Err(AggregationError::UndefinedWeights);
    }
    Ok(TierWeights { numerators: counts.iter().rev().copied().collect(), denominator })
}

/// Static tier assignment shared by TT-Fed and FedAT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSchedule {
    pub num_tiers: usize,
    /// Tier of each user, 1-based, indexed by user id.
    pub tier_of: Vec<usize>,
    /// Total data size of each tier, indexed by `tier - 1`.
    pub tier_data: Vec<usize>,
    pub delta_t: f64,
    /// Single local-round time of the slowest user.
    pub slowest: f64,
}

impl TierSchedule {
    pub fn members(&self, tier: usize) -> impl Iterator<Item = usize> + '_ {
        self.tier_of.iter().enumerate().filter(move |(_, &m)| m == tier).map(|(u, _)| u)
    }

    pub fn is_due(&self, round: u64, tier: usize) -> bool {
        round.is_multiple_of(tier as u64)
    }

    /// Tiers whose deadline falls on `round`.
    pub fn due_tiers(&self, round: u64) -> Vec<usize> {
        (1..=self.num_tiers).filter(|&m| self.is_due(round, m)).collect()
    }

    /// Tiers that pick up the global model at the start of `round`.
    pub fn starting_tiers(&self, round: u64) -> Vec<usize> {
        (1..=self.num_tiers).filter(|&m| (round - 1).is_multiple_of(m as u64)).collect()
    }
}

/// Successful uploads of one round, grouped by tier.
#[derive(Debug, Clone)]
pub struct AggregationInput<'a> {
    pub round: u64,
    /// Indexed by `tier - 1`; only due tiers may be non-empty.
    pub tier_uploads: Vec<Vec<Upload<'a>>>,
    pub prev_global: &'a ParamVector,
}

/// Data-size weighted mean of a tier's successful uploads, or `None` when
/// every upload in the tier failed.
pub fn ttfed_intra_tier(uploads: &[Upload<'_>]) -> Option<ParamVector> {
    weighted_mean(uploads).ok()
}

#[derive(Debug, Clone)]
pub struct GlobalUpdate {
    pub model: ParamVector,
    /// Successful uploads that landed in a tier with weight zero.
    pub zero_weight_uploads: usize,
}

/// `sum over due tiers of alpha_m * intra_m + sum over the rest of
/// alpha_m * w_prev`. A due tier with no successful upload falls back to the
/// previous global model. Zero-weight terms are skipped, so a single tier of
/// weight one returns its intra-tier mean unchanged.
pub fn ttfed_global(
    input: &AggregationInput<'_>,
    schedule: &TierSchedule,
) -> Result<GlobalUpdate, AggregationError> {
    let weights = ttfed_tier_weights(input.round, schedule.num_tiers)?;
    if weights.numerator_sum() != weights.denominator {
        return Err(AggregationError::WeightSum(weights.to_f64().iter().sum()));
    }
    let mut zero_weight_uploads = 0;
    let mut out: Option<ParamVector> = None;
    for tier in 1..=schedule.num_tiers {
        let uploads = input.tier_uploads.get(tier - 1).map(Vec::as_slice).unwrap_or(&[]);
        let due = schedule.is_due(input.round, tier);
        if weights.numerators[tier - 1] == 0 {
            if due {
                zero_weight_uploads += uploads.len();
            }
            continue;
        }
        let alpha = weights.weight(tier);
        let intra = if due { ttfed_intra_tier(uploads) } else { None };
        let term = intra.as_ref().unwrap_or(input.prev_global);
        match out.as_mut() {
            None if alpha == 1.0 => out = Some(term.clone()),
            None => out = Some(term.scaled(alpha)),
            Some(acc) => acc.add_scaled(alpha, term),
        }
    }
    Ok(GlobalUpdate { model: out.unwrap_or_else(|| input.prev_global.clone()), zero_weight_uploads })
}

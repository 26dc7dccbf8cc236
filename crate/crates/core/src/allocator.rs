//! Per-round user selection and bandwidth allocation.
//!
//! Each qualified user gets the smallest bandwidth that lets its upload land
//! exactly on its tier deadline. Users are then admitted greedily by expected
//! successfully-delivered data until the uplink budget runs out.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{lambert_w_minus1_exp_product, NumericsError};
use crate::wireless::{stp, ChannelParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error("deadline slack must be positive, got {0} s")]
    InfeasibleDeadline(f64),
    #[error("channel gain must be positive, got {0}")]
    NonPositiveGain(f64),
    #[error("capacity coefficient {0} >= 1: the deadline is out of reach at any bandwidth")]
    CapacityInfeasible(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `Z N0 ln 2 / (P |g|² s)`; the ratio of the required rate `Z / s` to the
/// infinite-bandwidth rate ceiling.
pub fn lambda_coeff(
    model_bits: f64,
    slack: f64,
    gain_power: f64,
    params: &ChannelParams,
) -> Result<f64, AllocationError> {
    if !(slack > 0.0) {
        return Err(AllocationError::InfeasibleDeadline(slack));
    }
    if !(gain_power > 0.0) {
        return Err(AllocationError::NonPositiveGain(gain_power));
    }
    Ok(model_bits * params.noise_psd * LN_2 / (params.tx_power * gain_power * slack))
}

/// Smallest bandwidth meeting the deadline:
/// `-Z ln 2 / ((W₋₁(-Λ e^-Λ) + Λ) s)`.
pub fn optimal_bandwidth(lambda: f64, model_bits: f64, slack: f64) -> Result<f64, AllocationError> {
    if !(slack > 0.0) {
        return Err(AllocationError::InfeasibleDeadline(slack));
    }
    if !(lambda < 1.0) {
        return Err(AllocationError::CapacityInfeasible(lambda));
    }
    let w = lambert_w_minus1_exp_product(lambda)?;
    Ok(-model_bits * LN_2 / ((w + lambda) * slack))
}

/// `alpha * D_u * stp(b, d)`.
pub fn contribution_weight(
    alpha: f64,
    data_size: usize,
    bandwidth: f64,
    distance: f64,
    params: &ChannelParams,
) -> f64 {
    alpha * data_size as f64 * stp(bandwidth, distance, params)
}

/// A user whose tier is due this round, with its allocation precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualifiedUser {
    pub user_id: usize,
    pub tier: usize,
    pub data_size: usize,
    pub alpha: f64,
    pub distance: f64,
    /// `m * dT - tau_cp`.
    pub slack: f64,
    /// |g|² used in the capacity coefficient.
    pub gain_power: f64,
    pub lambda: f64,
    pub bandwidth: f64,
    pub weight: f64,
}

impl QualifiedUser {
    /// Computes the optimal bandwidth and contribution weight, or the reason
    /// the user cannot make its deadline.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        user_id: usize,
        tier: usize,
        data_size: usize,
        alpha: f64,
        distance: f64,
        slack: f64,
        gain_power: f64,
        params: &ChannelParams,
    ) -> Result<Self, AllocationError> {
        let lambda = lambda_coeff(params.model_size_bits, slack, gain_power, params)?;
        let bandwidth = optimal_bandwidth(lambda, params.model_size_bits, slack)?;
        Ok(Self {
            user_id,
            tier,
            data_size,
            alpha,
            distance,
            slack,
            gain_power,
            lambda,
            bandwidth,
            weight: contribution_weight(alpha, data_size, bandwidth, distance, params),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub user_id: usize,
    pub bandwidth: f64,
}

/// Selected users and their bandwidth; unselected users are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub allocations: Vec<Allocation>,
    pub allocated: f64,
}

impl RoundPlan {
    pub fn is_selected(&self, user_id: usize) -> bool {
        self.allocations.iter().any(|a| a.user_id == user_id)
    }

    pub fn bandwidth_of(&self, user_id: usize) -> Option<f64> {
        self.allocations.iter().find(|a| a.user_id == user_id).map(|a| a.bandwidth)
    }

    pub fn len(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionRule {
    /// Stop at the first user that does not fit.
    #[default]
    BreakOnMisfit,
    /// Skip users that do not fit and keep going.
    SkipMisfit,
}

/// Descending weight, ties to the lower user id.
fn greedy_order(qualified: &[QualifiedUser]) -> Vec<&QualifiedUser> {
    let mut order: Vec<&QualifiedUser> = qualified.iter().collect();
    order.sort_by(|a, b| {
        b.weight.partial_cmp(&a.weight).unwrap_or(Ordering::Equal).then(a.user_id.cmp(&b.user_id))
    });
    order
}

/// Greedy admission by contribution weight under the budget `budget` Hz.
pub fn select_users(qualified: &[QualifiedUser], budget: f64, rule: SelectionRule) -> RoundPlan {
    let mut plan = RoundPlan::default();
    for user in greedy_order(qualified) {
        let next = plan.allocated + user.bandwidth;
        if next <= budget {
            plan.allocated = next;
            plan.allocations.push(Allocation { user_id: user.user_id, bandwidth: user.bandwidth });
        } else if rule == SelectionRule::BreakOnMisfit {
            break;
        }
    }
    plan
}

/// Expected successfully delivered, tier-weighted data of `plan`.
pub fn objective_value(plan: &RoundPlan, qualified: &[QualifiedUser], params: &ChannelParams) -> f64 {
    plan.allocations
        .iter()
        .filter_map(|a| {
            qualified
                .iter()
                .find(|q| q.user_id == a.user_id)
                .map(|q| contribution_weight(q.alpha, q.data_size, a.bandwidth, q.distance, params))
        })
        .fold(0.0, |acc, w| acc + w)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulingPolicy {
    /// Closed-form bandwidth and greedy selection by tier-weighted value.
    #[default]
    Proposed,
    /// Greedy selection, then the budget split evenly among selected users.
    EqualBandwidth,
    /// As proposed, but every tier carries weight `1/M` in the objective.
    EqualWeight,
}

/// Plans one round for `qualified` users under `policy`.
///
/// For `EqualWeight` the caller's `alpha` is replaced by `1 / num_tiers`
/// before ranking. For `EqualBandwidth` each selected user receives
/// `budget / n`; users for whom that share is below their optimal bandwidth
/// would miss the deadline and are dropped.
pub fn plan_round(
    qualified: &[QualifiedUser],
    budget: f64,
    rule: SelectionRule,
    policy: SchedulingPolicy,
    num_tiers: usize,
    params: &ChannelParams,
) -> RoundPlan {
    match policy {
        SchedulingPolicy::Proposed => select_users(qualified, budget, rule),
        SchedulingPolicy::EqualWeight => {
            let alpha = 1.0 / num_tiers as f64;
            let reweighted: Vec<QualifiedUser> = qualified
                .iter()
                .map(|q| QualifiedUser {
                    alpha,
                    weight: contribution_weight(alpha, q.data_size, q.bandwidth, q.distance, params),
                    ..q.clone()
                })
                .collect();
            select_users(&reweighted, budget, rule)
        }
        SchedulingPolicy::EqualBandwidth => {
            let greedy = select_users(qualified, budget, rule);
            if greedy.is_empty() {
                return greedy;
            }
            let share = budget / greedy.len() as f64;
            let mut plan = RoundPlan::default();
            for a in &greedy.allocations {
                if share >= a.bandwidth {
                    plan.allocations.push(Allocation { user_id: a.user_id, bandwidth: share });
                }
            }
            let mut total: f64 = plan.allocations.iter().map(|a| a.bandwidth).sum();
            // n * (B / n) can round above B; trim until the sum fits.
            while total > budget {
                for a in &mut plan.allocations {
                    a.bandwidth = a.bandwidth.next_down();
                }
                total = plan.allocations.iter().map(|a| a.bandwidth).sum();
            }
            plan.allocated = total;
            plan
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bisect_root;
    use crate::wireless::comm_delay;

    fn params() -> ChannelParams {
        let mut p = ChannelParams::reference(636_160.0);
        p.noise_psd = 3.98e-21;
        p
    }

    fn user(id: usize, weight: f64, bandwidth: f64) -> QualifiedUser {
        QualifiedUser {
            user_id: id,
            tier: 1,
            data_size: 1,
            alpha: 1.0,
            distance: 1.0,
            slack: 1.0,
            gain_power: 1.0,
            lambda: 0.5,
            bandwidth,
            weight,
        }
    }

    #[test]
    fn lambda_examples() {
        let p = params();
        let l = lambda_coeff(636_160.0, 0.5, 3.02e-8, &p).unwrap();
        assert!((l / 1.16e-5 - 1.0).abs() < 0.01, "{l}");
        assert!(matches!(
            lambda_coeff(636_160.0, 0.0, 3.02e-8, &p),
            Err(AllocationError::InfeasibleDeadline(_))
        ));
        let l2 = lambda_coeff(636_160.0, 1.0, 3.02e-8, &p).unwrap();
        assert!((l2 * 2.0 / l - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_matches_bisection_and_meets_deadline() {
        let p = params();
        let (z, s, g) = (636_160.0, 0.5, 3.02e-8);
        let l = lambda_coeff(z, s, g, &p).unwrap();
        let b = optimal_bandwidth(l, z, s).unwrap();
        let c = p.tx_power * g / p.noise_psd;
        let oracle = bisect_root(|x| x * (c / x).ln_1p() / LN_2 - z / s, 1.0, 1e9, 1e-9).unwrap();
        assert!((b / oracle - 1.0).abs() < 1e-6, "{b} vs {oracle}");
        assert!((b / 6.30e4 - 1.0).abs() < 0.01);
        let delay = comm_delay(b, g, &p).unwrap();
        assert!((delay / s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn near_capacity_bandwidth_is_large_and_accurate() {
        let (z, s) = (636_160.0, 0.5);
        let lambda = 0.999_999;
        let b = optimal_bandwidth(lambda, z, s).unwrap();
        assert!(b.is_finite() && b > 1e9);
        // b log2(1 + C/b) = A with C chosen so that Z/s / (C / ln 2) = lambda.
        let a = z / s;
        let c = a * LN_2 / lambda;
        let f = |x: f64| x * (c / x).ln_1p() / LN_2 - a;
        let oracle = bisect_root(f, 1.0, 1e15, 1e-3).unwrap();
        assert!((b / oracle - 1.0).abs() < 1e-4, "{b} vs {oracle}");
        assert!(matches!(optimal_bandwidth(1.0, z, s), Err(AllocationError::CapacityInfeasible(_))));
    }

    #[test]
    fn contribution_examples() {
        let p = params();
        assert_eq!(contribution_weight(0.0, 125, 1e6, 100.0, &p), 0.0);
        let w1 = contribution_weight(0.5, 10, 1e6, 100.0, &p);
        assert_eq!(contribution_weight(0.5, 20, 1e6, 100.0, &p), 2.0 * w1);
        let direct: f64 = 1.0 / 3.0 * 125.0 * 0.99;
        assert!((direct - 41.25).abs() < 1e-12);
    }

    #[test]
    fn greedy_examples() {
        let b = 1e6;
        let all = [user(0, 5.0, 0.2 * b), user(1, 3.0, 0.3 * b)];
        assert_eq!(select_users(&all, b, SelectionRule::BreakOnMisfit).len(), 2);

        let tight = [user(0, 5.0, 0.8 * b), user(1, 3.0, 0.5 * b), user(2, 1.0, 0.1 * b)];
        let plan = select_users(&tight, b, SelectionRule::BreakOnMisfit);
        assert_eq!(plan.allocations, vec![Allocation { user_id: 0, bandwidth: 0.8 * b }]);
        let skip = select_users(&tight, b, SelectionRule::SkipMisfit);
        assert!(skip.is_selected(0) && skip.is_selected(2) && !skip.is_selected(1));

        let empty = select_users(&[], b, SelectionRule::BreakOnMisfit);
        assert!(empty.is_empty());
        assert_eq!(empty.allocated, 0.0);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let b = 1.0;
        let users = [user(4, 2.0, 0.6), user(1, 2.0, 0.6)];
        let plan = select_users(&users, b, SelectionRule::BreakOnMisfit);
        assert_eq!(plan.allocations[0].user_id, 1);
        assert_eq!(plan.len(), 1);
    }

    #[test]
    fn objective_examples() {
        let p = params();
        let q = QualifiedUser::new(0, 1, 125, 1.0 / 3.0, 100.0, 0.5, 3.02e-8, &p).unwrap();
        assert_eq!(objective_value(&RoundPlan::default(), std::slice::from_ref(&q), &p), 0.0);
        let plan = select_users(std::slice::from_ref(&q), 20e6, SelectionRule::BreakOnMisfit);
        assert_eq!(objective_value(&plan, std::slice::from_ref(&q), &p), q.weight);
    }

    #[test]
    fn equal_bandwidth_stays_within_budget() {
        let p = params();
        let qualified: Vec<QualifiedUser> = (0..7)
            .map(|u| QualifiedUser::new(u, 1, 125, 1.0, 100.0 + 50.0 * u as f64, 0.1, 1e-9, &p).unwrap())
            .collect();
        let budget = 3e6 + 1e-7;
        let plan = plan_round(
            &qualified,
            budget,
            SelectionRule::BreakOnMisfit,
            SchedulingPolicy::EqualBandwidth,
            1,
            &p,
        );
        let total: f64 = plan.allocations.iter().map(|a| a.bandwidth).sum();
        assert!(total <= budget);
        for a in &plan.allocations {
            let q = qualified.iter().find(|q| q.user_id == a.user_id).unwrap();
            assert!(a.bandwidth >= q.bandwidth.next_down());
        }
    }

    #[test]
    fn equal_weight_ignores_tier_alpha() {
        let p = params();
        let mut a = QualifiedUser::new(0, 1, 100, 0.0, 200.0, 0.5, 1e-9, &p).unwrap();
        let b = QualifiedUser::new(1, 2, 100, 1.0, 200.0, 0.5, 1e-9, &p).unwrap();
        a.slack = b.slack;
        let budget = a.bandwidth.max(b.bandwidth) * 1.5;
        let proposed = plan_round(
            &[a.clone(), b.clone()],
            budget,
            SelectionRule::BreakOnMisfit,
            SchedulingPolicy::Proposed,
            2,
            &p,
        );
        assert_eq!(proposed.allocations[0].user_id, 1);
        let equal =
            plan_round(&[a, b], budget, SelectionRule::BreakOnMisfit, SchedulingPolicy::EqualWeight, 2, &p);
        assert_eq!(equal.allocations[0].user_id, 0);
    }
}

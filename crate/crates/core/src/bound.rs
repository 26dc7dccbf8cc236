//! Convergence upper bound for TT-Fed and its sufficient conditions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("invalid bound constant `{name}`: {value}")]
    Invalid { name: &'static str, value: f64 },
    #[error("expected {expected} per-tier failure fractions, got {got}")]
    FailureCount { expected: usize, got: usize },
    #[error("the contraction term delta2 is zero; the asymptote divides by it")]
    ZeroDelta2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Smoothness.
    pub l: f64,
    /// Strong convexity.
    pub mu: f64,
    pub chi: f64,
    pub nu: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub phi: f64,
    /// Mean-value constant in `(0, M)`; `None` means `M / 2`.
    pub xi: Option<f64>,
    pub initial_gap: f64,
    /// Failed share of each tier's data, `D_{m,F} / D_m`.
    pub failure_fractions: Vec<f64>,
    pub num_tiers: usize,
}

impl BoundConstants {
    pub fn xi(&self) -> f64 {
        self.xi.unwrap_or(self.num_tiers as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<(), BoundError> {
        let positive = [("l", self.l), ("mu", self.mu)];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(BoundError::Invalid { name, value });
            }
        }
        let nonneg = [
            ("chi", self.chi),
            ("nu", self.nu),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("beta", self.beta),
            ("phi", self.phi),
            ("initial_gap", self.initial_gap),
        ];
        for (name, value) in nonneg {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(BoundError::Invalid { name, value });
            }
        }
        if self.num_tiers == 0 {
            return Err(BoundError::Invalid { name: "num_tiers", value: 0.0 });
        }
        let xi = self.xi();
        if !(xi > 0.0 && xi < self.num_tiers as f64) {
            return Err(BoundError::Invalid { name: "xi", value: xi });
        }
        if self.failure_fractions.len() != self.num_tiers {
            return Err(BoundError::FailureCount {
                expected: self.num_tiers,
                got: self.failure_fractions.len(),
            });
        }
        for &f in &self.failure_fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(BoundError::Invalid { name: "failure_fractions", value: f });
            }
        }
        Ok(())
    }

    fn drift_factor(&self, failure: f64) -> f64 {
        1.0 + (1.0 + self.beta).powi(2) * failure
    }
}

/// Average over tiers of `L eps² + 3/(4L) (phi² + chi (1 + (1+beta)² f_m))`.
pub fn delta1(c: &BoundConstants) -> f64 {
    let sum: f64 = c
        .failure_fractions
        .iter()
        .map(|&f| {
            c.l * c.epsilon * c.epsilon + 3.0 / (4.0 * c.l) * (c.phi * c.phi + c.chi * c.drift_factor(f))
        })
        .sum();
    sum / c.num_tiers as f64
}

/// Average over tiers of `1 - 4 delta L - 3 nu (1 + (1+beta)² f_m)`.
pub fn delta2(c: &BoundConstants) -> f64 {
    let sum: f64 =
        c.failure_fractions.iter().map(|&f| 1.0 - 4.0 * c.delta * c.l - 3.0 * c.nu * c.drift_factor(f)).sum();
    sum / c.num_tiers as f64
}

/// Per-round contraction `1 - mu xi delta2 / (2L)`.
pub fn contraction(c: &BoundConstants) -> f64 {
    1.0 - c.mu * c.xi() * delta2(c) / (2.0 * c.l)
}

/// Limit of the bound as the round count grows: `2 delta1 L / (mu delta2)`.
pub fn asymptote(c: &BoundConstants) -> Result<f64, BoundError> {
    let d2 = delta2(c);
    if d2 == 0.0 {
        return Err(BoundError::ZeroDelta2);
    }
    Ok(2.0 * delta1(c) * c.l / (c.mu * d2))
}

/// Upper bound on `F(w^K) - F(w*)` after `rounds` global rounds.
pub fn convergence_bound(c: &BoundConstants, rounds: u64) -> Result<f64, BoundError> {
    c.validate()?;
    let limit = asymptote(c)?;
    let rho = contraction(c);
    let decay = if rounds > i32::MAX as u64 { rho.powf(rounds as f64) } else { rho.powi(rounds as i32) };
    Ok(decay * c.initial_gap + limit * (1.0 - decay))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionFailure {
    /// `mu / (2L) <= 1/M` violated.
    TierCount,
    /// `0 <= 4 delta L + 3 nu (1 + (1+beta)²) <= 1` violated.
    DriftBudget,
}

impl std::fmt::Display for ConditionFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TierCount => f.write_str("tier-count bound"),
            Self::DriftBudget => f.write_str("drift budget"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub holds: bool,
    pub failures: Vec<ConditionFailure>,
}

/// Sufficient conditions for convergence. Both inequalities are closed.
pub fn check_convergence_conditions(c: &BoundConstants) -> ConditionCheck {
    let mut failures = Vec::new();
    let ratio = c.mu / (2.0 * c.l);
    if !(ratio >= 0.0 && ratio <= 1.0 / c.num_tiers as f64) {
        failures.push(ConditionFailure::TierCount);
    }
    let drift = 4.0 * c.delta * c.l + 3.0 * c.nu * (1.0 + (1.0 + c.beta).powi(2));
    if !(0.0..=1.0).contains(&drift) {
        failures.push(ConditionFailure::DriftBudget);
    }
    ConditionCheck { holds: failures.is_empty(), failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BoundConstants {
        BoundConstants {
            l: 2.0,
            mu: 0.5,
            chi: 0.4,
            nu: 0.0,
            delta: 0.0,
            epsilon: 0.0,
            beta: 1.0,
            phi: 0.0,
            xi: None,
            initial_gap: 10.0,
            failure_fractions: vec![0.0],
            num_tiers: 1,
        }
    }

    #[test]
    fn delta1_examples() {
        let c = base();
        assert!((delta1(&c) - 3.0 * 0.4 / 8.0).abs() < 1e-15);
        let quiet = BoundConstants { chi: 0.0, ..base() };
        assert_eq!(delta1(&quiet), 0.0);
        let failing = BoundConstants { failure_fractions: vec![0.3], ..base() };
        assert!(delta1(&failing) > delta1(&c));
    }

    #[test]
    fn delta2_examples() {
        assert_eq!(delta2(&base()), 1.0);
        let c = BoundConstants { nu: 0.1, ..base() };
        assert!((delta2(&c) - 0.7).abs() < 1e-15);
        let failing = BoundConstants { failure_fractions: vec![0.5], ..c.clone() };
        assert!(delta2(&failing) < delta2(&c));
    }

    #[test]
    fn bound_endpoints() {
        let c = base();
        assert_eq!(convergence_bound(&c, 0).unwrap(), c.initial_gap);
        let limit = asymptote(&c).unwrap();
        let far = convergence_bound(&c, 100_000).unwrap();
        assert!((far - limit).abs() <= 1e-9 * limit.max(1.0));
        // 4 * delta * L = 1 cancels the leading term exactly.
        let zero = BoundConstants { delta: 0.125, ..base() };
        assert_eq!(convergence_bound(&zero, 3).unwrap_err(), BoundError::ZeroDelta2);
    }

    #[test]
    fn condition_examples() {
        let c = BoundConstants { l: 1.0, mu: 1.0, ..base() };
        assert!(check_convergence_conditions(&c).holds);
        let many = BoundConstants { num_tiers: 3, failure_fractions: vec![0.0; 3], ..c.clone() };
        let check = check_convergence_conditions(&many);
        assert_eq!(check.failures, vec![ConditionFailure::TierCount]);
        assert_eq!(ConditionFailure::TierCount.to_string(), "tier-count bound");
        let edge = BoundConstants { delta: 0.25, ..c.clone() };
        assert!(check_convergence_conditions(&edge).holds);
        let over = BoundConstants { delta: 0.26, ..c };
        assert_eq!(check_convergence_conditions(&over).failures, vec![ConditionFailure::DriftBudget]);
    }

    #[test]
    fn validation_rejects_bad_constants() {
        assert!(BoundConstants { l: 0.0, ..base() }.validate().is_err());
        assert!(BoundConstants { xi: Some(1.0), ..base() }.validate().is_err());
        assert!(BoundConstants { failure_fractions: vec![], ..base() }.validate().is_err());
        assert!(BoundConstants { failure_fractions: vec![1.5], ..base() }.validate().is_err());
    }
}

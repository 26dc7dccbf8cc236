use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttfed_core::aggregation::{
    fedasync_aggregate, fedat_aggregate, ttfed_global, ttfed_tier_weights, weighted_mean, AggregationInput,
    TierSchedule, Upload,
};
use ttfed_core::allocator::{
    lambda_coeff, objective_value, optimal_bandwidth, plan_round, select_users, QualifiedUser,
    SchedulingPolicy, SelectionRule,
};
use ttfed_core::bound::{check_convergence_conditions, convergence_bound, BoundConstants};
use ttfed_core::datagen::{partition, Concentration, LabeledDataset, PartitionSpec, NUM_CLASSES};
use ttfed_core::learner::{softmax, ParamVector};
use ttfed_core::numerics::{bisect_root, lambert_w_minus1};
use ttfed_core::wireless::{
    achievable_rate, comm_delay, draw_success, path_loss, rate_ceiling, stp, ChannelParams,
};

const INV_E: f64 = 0.367_879_441_171_442_33;

fn reference_channel() -> ChannelParams {
    ChannelParams::reference(39_760.0 * 16.0)
}

fn assert_convex(inputs: &[&ParamVector], out: &ParamVector) {
    for i in 0..out.len() {
        let lo = inputs.iter().map(|p| p.as_slice()[i]).fold(f64::INFINITY, f64::min);
        let hi = inputs.iter().map(|p| p.as_slice()[i]).fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        let v = out.as_slice()[i];
        assert!(v >= lo - slack && v <= hi + slack, "coordinate {i}: {v} outside [{lo}, {hi}]");
    }
}

fn vectors(count: usize, dim: usize) -> impl Strategy<Value = Vec<ParamVector>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), count)
        .prop_map(|vs| vs.into_iter().map(ParamVector::from_vec).collect())
}

// Lambert W

#[test]
fn lambert_residual_on_uniform_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (lo, hi) = (-INV_E + 1e-9, -1e-9);
    for _ in 0..10_000 {
        let x = rng.random_range(lo..hi);
        let w = lambert_w_minus1(x).unwrap();
        assert!(w <= -1.0, "W({x}) = {w}");
        let rel = (w * w.exp() - x).abs() / x.abs();
        assert!(rel <= 1e-10, "residual {rel} at x = {x}");
    }
}

#[test]
fn lambert_is_monotone_on_sorted_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-INV_E + 1e-9..-1e-9)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let ws: Vec<f64> = xs.iter().map(|&x| lambert_w_minus1(x).unwrap()).collect();
    for pair in ws.windows(2) {
        assert!(pair[0] > pair[1], "{} then {}", pair[0], pair[1]);
    }
    assert_eq!(lambert_w_minus1(-INV_E).unwrap(), -1.0);
    assert!(lambert_w_minus1(-1e-300).unwrap() < -690.0);
}

// Wireless

#[test]
fn draw_success_matches_stp_by_monte_carlo() {
    let params = reference_channel();
    let cases = [(1e6, 300.0), (1e6, 600.0), (2e7, 500.0), (5e5, 800.0), (1e5, 1.0)];
    for (i, &(b, d)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let n = 100_000;
        let hits = (0..n).filter(|_| draw_success(b, d, &params, &mut rng)).count();
        let p = stp(b, d, &params);
        let mean = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
        assert!((mean - p).abs() <= 3.0 * se, "b={b} d={d}: {mean} vs {p}");
    }
}

#[test]
fn rate_gap_to_ceiling_shrinks_on_geometric_grid() {
    let params = reference_channel();
    for &gain in &[1e-12, 1e-10, 1e-8] {
        let ceiling = rate_ceiling(gain, &params);
        let mut prev_gap = f64::INFINITY;
        let mut b = 1e3;
        while b <= 1e10 {
            let r = achievable_rate(b, gain, &params).unwrap();
            let gap = ceiling - r;
            assert!(r < ceiling, "rate {r} reached ceiling {ceiling} at b = {b}");
            assert!(gap < prev_gap, "gap grew at b = {b}");
            prev_gap = gap;
            b *= 2.0;
        }
    }
}

proptest! {
    #[test]
    fn path_loss_is_one_near_and_non_increasing(d1 in 0.0f64..2000.0, d2 in 0.0f64..2000.0, a in 2.0f64..5.0) {
        let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(path_loss(near, a) >= path_loss(far, a));
        if near <= 1.0 {
            prop_assert_eq!(path_loss(near, a), 1.0);
        }
    }
}

// Allocator

fn random_user(rng: &mut ChaCha8Rng, id: usize, params: &ChannelParams) -> Option<QualifiedUser> {
    let tier = rng.random_range(1..=4usize);
    let slack = rng.random_range(0.005..0.5);
    let distance = rng.random_range(1.0..900.0);
    let gain = path_loss(distance, params.path_loss_exponent) * rng.random_range(0.05..3.0);
    QualifiedUser::new(
        id,
        tier,
        rng.random_range(10..400),
        rng.random_range(0.0..1.0),
        distance,
        slack,
        gain,
        params,
    )
    .ok()
}

#[test]
fn closed_form_bandwidth_matches_bisection() {
    let params = reference_channel();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let lambda = 10f64.powf(rng.random_range(-7.0..(0.99f64).log10()));
        let bits = rng.random_range(1e4..1e7);
        let slack = rng.random_range(1e-3..1.0);
        let gain = bits * params.noise_psd * std::f64::consts::LN_2 / (params.tx_power * lambda * slack);
        let p = ChannelParams { model_size_bits: bits, ..params };
        let closed = optimal_bandwidth(lambda, bits, slack).unwrap();

        let deficit = |b: f64| achievable_rate(b, gain, &p).unwrap() - bits / slack;
        let mut hi = 1.0;
        while deficit(hi) < 0.0 {
            hi *= 2.0;
        }
        let root = bisect_root(deficit, hi * 1e-12, hi, hi * 1e-15).unwrap();
        assert!((closed - root).abs() <= 1e-6 * root, "lambda {lambda}: closed {closed} vs bisection {root}");
    }
}

#[test]
fn optimal_bandwidth_meets_deadline_exactly() {
    let params = reference_channel();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    while checked < 1000 {
        let delta_t = rng.random_range(0.01..0.2);
        let tier = rng.random_range(1..=4u32);
        let compute = rng.random_range(0.0..0.9) * delta_t * f64::from(tier);
        let slack = f64::from(tier) * delta_t - compute;
        let gain = path_loss(rng.random_range(1.0..900.0), params.path_loss_exponent);
        let Ok(lambda) = lambda_coeff(params.model_size_bits, slack, gain, &params) else {
            continue;
        };
        let Ok(b) = optimal_bandwidth(lambda, params.model_size_bits, slack) else {
            continue;
        };
        let total = comm_delay(b, gain, &params).unwrap() + compute;
        let deadline = f64::from(tier) * delta_t;
        assert!((total - deadline).abs() <= 1e-6 * deadline, "{total} vs {deadline}");
        checked += 1;
    }
}

#[test]
fn plans_never_exceed_budget() {
    let params = reference_channel();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let policies =
        [SchedulingPolicy::Proposed, SchedulingPolicy::EqualBandwidth, SchedulingPolicy::EqualWeight];
    let rules = [SelectionRule::BreakOnMisfit, SelectionRule::SkipMisfit];
    for round in 0..10_000 {
        let n = rng.random_range(0..30);
        let qualified: Vec<QualifiedUser> =
            (0..n).filter_map(|id| random_user(&mut rng, id, &params)).collect();
        let budget = rng.random_range(1e4..5e7);
        let policy = policies[round % 3];
        let rule = rules[(round / 3) % 2];
        let plan = plan_round(&qualified, budget, rule, policy, 4, &params);
        let total: f64 = plan.allocations.iter().map(|a| a.bandwidth).sum();
        assert!(total <= budget, "round {round}: {total} > {budget}");
        assert!(plan.allocated <= budget);
        for a in &plan.allocations {
            let q = qualified.iter().find(|q| q.user_id == a.user_id).unwrap();
            assert!(a.bandwidth >= q.bandwidth, "user below its deadline bandwidth");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn larger_budget_never_lowers_greedy_objective(seed in any::<u64>(), n in 1usize..25, b1 in 1e4f64..3e7, extra in 0.0f64..3e7) {
        let params = reference_channel();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qualified: Vec<QualifiedUser> =
            (0..n).filter_map(|id| random_user(&mut rng, id, &params)).collect();
        let small = select_users(&qualified, b1, SelectionRule::BreakOnMisfit);
        let large = select_users(&qualified, b1 + extra, SelectionRule::BreakOnMisfit);
        prop_assert!(objective_value(&large, &qualified, &params) >= objective_value(&small, &qualified, &params));
    }
}

// Aggregation

#[test]
fn tier_weights_sum_to_one_exhaustively() {
    for m in 1..=64usize {
        for k in 1..=10_000u64 {
            let w = ttfed_tier_weights(k, m).unwrap();
            assert_eq!(w.numerator_sum(), w.denominator, "k={k} M={m}");
        }
    }
}

proptest! {
    #[test]
    fn weighted_mean_is_convex(models in vectors(5, 6), sizes in prop::collection::vec(1usize..500, 5)) {
        let uploads: Vec<Upload<'_>> = models.iter().zip(&sizes).enumerate()
            .map(|(u, (m, &d))| Upload { user_id: u, data_size: d, model: m })
            .collect();
        let out = weighted_mean(&uploads).unwrap();
        assert_convex(&models.iter().collect::<Vec<_>>(), &out);
    }

    #[test]
    fn fedasync_mix_is_convex(models in vectors(2, 6), psi in 0.001f64..0.999) {
        let out = fedasync_aggregate(&models[0], &models[1], psi).unwrap();
        assert_convex(&[&models[0], &models[1]], &out);
    }

    #[test]
    fn fedat_merge_is_convex(models in vectors(4, 6), raw in prop::collection::vec(0u64..20, 4)) {
        prop_assume!(raw.iter().sum::<u64>() > 0);
        let total: u64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|&r| r as f64 / total as f64).collect();
        let drift = 1.0 - weights.iter().sum::<f64>();
        let last = weights.iter().rposition(|&w| w > 0.0).unwrap();
        weights[last] += drift;
        let out = fedat_aggregate(&models, &weights).unwrap();
        assert_convex(&models.iter().collect::<Vec<_>>(), &out);
    }

    #[test]
    fn ttfed_global_is_convex(
        models in vectors(6, 5),
        prev in vectors(1, 5),
        tiers in prop::collection::vec(1usize..=3, 6),
        sizes in prop::collection::vec(1usize..300, 6),
        drop in prop::collection::vec(any::<bool>(), 6),
        round in 1u64..50,
    ) {
        let schedule = TierSchedule {
            num_tiers: 3,
            tier_of: tiers.clone(),
            tier_data: (1..=3).map(|m| tiers.iter().zip(&sizes).filter(|(&t, _)| t == m).map(|(_, &d)| d).sum()).collect(),
            delta_t: 1.0,
            slowest: 3.0,
        };
        let mut tier_uploads: Vec<Vec<Upload<'_>>> = vec![Vec::new(); 3];
        for u in 0..6 {
            if schedule.is_due(round, tiers[u]) && !drop[u] {
                tier_uploads[tiers[u] - 1].push(Upload { user_id: u, data_size: sizes[u], model: &models[u] });
            }
        }
        let input = AggregationInput { round, tier_uploads, prev_global: &prev[0] };
        let out = ttfed_global(&input, &schedule).unwrap().model;
        let mut inputs: Vec<&ParamVector> = models.iter().collect();
        inputs.push(&prev[0]);
        assert_convex(&inputs, &out);
    }

    #[test]
    fn weighted_mean_ignores_upload_order(models in vectors(6, 4), sizes in prop::collection::vec(1usize..500, 6), seed in any::<u64>()) {
        let uploads: Vec<Upload<'_>> = models.iter().zip(&sizes).enumerate()
            .map(|(u, (m, &d))| Upload { user_id: u, data_size: d, model: m })
            .collect();
        let mut shuffled = uploads.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = weighted_mean(&uploads).unwrap();
        let b = weighted_mean(&shuffled).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

// Bound

fn holding_constants() -> impl Strategy<Value = BoundConstants> {
    (
        1usize..=4,
        0.5f64..5.0,
        0.0f64..1.0,
        0.0f64..2.0,
        0.0f64..1.0,
        0.0f64..1.0,
        0.0f64..1.0,
        0.0f64..3.0,
        0.0f64..1.0,
        0.0f64..50.0,
        prop::collection::vec(0.0f64..1.0, 4),
    )
        .prop_map(|(m, l, mu_frac, chi, delta_frac, nu_frac, eps, phi, beta, gap, fails)| {
            // Scale the free constants into the region where both conditions hold.
            let mu = mu_frac * 2.0 * l / m as f64;
            let budget = 0.9;
            let delta = delta_frac * budget / (8.0 * l);
            let nu = nu_frac * budget / (6.0 * (1.0 + (1.0 + beta) * (1.0 + beta)));
            BoundConstants {
                l,
                mu: mu.max(1e-6),
                chi,
                nu,
                delta,
                epsilon: eps,
                beta,
                phi,
                xi: None,
                initial_gap: gap,
                failure_fractions: fails[..m].to_vec(),
                num_tiers: m,
            }
        })
}

proptest! {
    #[test]
    fn bound_grows_with_failure_fractions(c in holding_constants(), tier in 0usize..4, bump in 0.0f64..1.0, rounds in 1u64..500) {
        prop_assume!(check_convergence_conditions(&c).holds);
        let tier = tier % c.num_tiers;
        let mut worse = c.clone();
        worse.failure_fractions[tier] = (c.failure_fractions[tier] + bump).min(1.0);
        let base = convergence_bound(&c, rounds).unwrap();
        let more = convergence_bound(&worse, rounds).unwrap();
        prop_assert!(more >= base * (1.0 - 1e-12), "{more} < {base}");
    }

    #[test]
    fn bound_non_increasing_in_rounds_without_failures(c in holding_constants(), rounds in 0u64..500) {
        let mut c = c;
        c.failure_fractions = vec![0.0; c.num_tiers];
        prop_assume!(check_convergence_conditions(&c).holds);
        let limit = convergence_bound(&c, u64::MAX).unwrap();
        prop_assume!(c.initial_gap >= limit);
        let now = convergence_bound(&c, rounds).unwrap();
        let next = convergence_bound(&c, rounds + 1).unwrap();
        prop_assert!(next <= now * (1.0 + 1e-12));
    }
}

// Data

fn synthetic(per_class: usize) -> LabeledDataset {
    let n = per_class * NUM_CLASSES;
    let labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
    let pixels: Vec<f64> = (0..n * 3).map(|i| (i % 7) as f64 / 7.0).collect();
    LabeledDataset::new(3, pixels, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_disjoint_and_conserving(users in 1usize..40, eta in 0.0f64..2.0, theta in prop::sample::select(vec![0.0, 0.1, 1.0, 10.0, f64::INFINITY]), seed in any::<u64>()) {
        let data = synthetic(30);
        let concentration = if theta == 0.0 {
            Concentration::Zero
        } else if theta.is_infinite() {
            Concentration::Infinite
        } else {
            Concentration::Finite(theta)
        };
        let spec = PartitionSpec { num_users: users, zipf_eta: eta, concentration, seed };
        let parts = partition(&data, &spec).unwrap();
        let mut seen = vec![false; data.len()];
        let mut total = 0;
        for shard in &parts.shards {
            for &i in &shard.indices {
                prop_assert!(!seen[i], "index {} assigned twice", i);
                seen[i] = true;
            }
            total += shard.len();
            let mut hist = [0usize; NUM_CLASSES];
            for &i in &shard.indices {
                hist[data.label(i)] += 1;
            }
            prop_assert_eq!(hist, shard.histogram);
        }
        prop_assert_eq!(total, data.len());
        prop_assert_eq!(parts.clone(), partition(&data, &spec).unwrap());
    }

    #[test]
    fn infinite_concentration_gives_near_uniform_histograms(users in 1usize..25, seed in any::<u64>()) {
        let data = synthetic(50);
        let spec = PartitionSpec { num_users: users, zipf_eta: 0.0, concentration: Concentration::Infinite, seed };
        let parts = partition(&data, &spec).unwrap();
        for shard in &parts.shards {
            let fair = shard.len() as f64 / NUM_CLASSES as f64;
            for &c in &shard.histogram {
                prop_assert!((c as f64 - fair).abs() <= 1.0, "{:?} for size {}", shard.histogram, shard.len());
            }
        }
    }

    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

//! Simulator tests: determinism across runs and thread counts, conservation
//! accounting, agreement with the exact evaluator, and the restricted-class
//! exhaustive search.

mod common;

use qdp::baselines::fullinfo::FullInfo;
use qdp::pmf::Pmf;
use qdp::policy::PurePolicy;
use qdp::pricing::{
    build_arrival_table, default_prices, named_service_pmf, PenaltySpec, PricingModel, PricingSpec,
};
use qdp::rng::StreamRng;
use qdp::sim::{
    block_policy, estimate_violations, exhaustive_restricted, service_cdf, simulate_policy,
    step_physical, PhysicalState,
};

fn model(n: usize, b: usize, horizon: usize, penalty: PenaltySpec) -> PricingModel {
    let prices = default_prices();
    let service = Pmf::new(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
    let lambda = build_arrival_table(&vec![1.0; horizon], 5.0, n, 2.5, &prices).unwrap();
    PricingModel::new(PricingSpec {
        n,
        b,
        horizon,
        prices,
        service,
        lambda,
        c_w: 0.1,
        c_t: 1.0,
        penalty,
        size_table: None,
    })
    .unwrap()
}

fn fixed_policy(model: &PricingModel, action: usize) -> PurePolicy {
    PurePolicy {
        actions: vec![vec![action; model.space.counters]; model.spec.horizon],
    }
}

#[test]
fn reject_always_earns_zero_everywhere() {
    let mut m = model(2, 2, 10, PenaltySpec::none());
    m.spec.c_w = 0.0;
    m.spec.c_t = 0.0;
    let reject = m.spec.action_count() - 1;
    let result = simulate_policy(&m, &fixed_policy(&m, reject), 5_000, 42).unwrap();
    assert_eq!(result.mean, 0.0);
    assert_eq!(result.revenue, 0.0);
    assert!(result.violation.iter().all(|&(p, _)| p == 0.0));
}

#[test]
fn identical_seeds_are_bit_identical_across_thread_counts() {
    let m = model(3, 2, 12, PenaltySpec::none());
    let policy = fixed_policy(&m, 4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| simulate_policy(&m, &policy, 20_000, 7).unwrap())
    };
    let one = run(1);
    let two = run(2);
    let again = run(2);
    assert_eq!(one, two);
    assert_eq!(two, again);
}

#[test]
fn conservation_per_replication() {
    // admitted = departed + in-system-at-T, revenue = Σ admitted × price.
    let m = model(2, 2, 15, PenaltySpec::none());
    let policy = fixed_policy(&m, 3);
    let cdf = service_cdf(&m);
    for rep in 0..200u64 {
        let mut rng = StreamRng::new(99, rep);
        let mut state = PhysicalState::empty(m.space.labels);
        let mut admitted = 0u64;
        let mut departed = 0u64;
        let mut revenue = 0.0;
        for t in 0..m.spec.horizon {
            let a = policy.action(t, state.z);
            let outcome = step_physical(&m, &mut state, t, a, &cdf, &mut rng);
            admitted += outcome.admitted as u64;
            departed += outcome.departed as u64;
            revenue += outcome.admitted as f64 * m.spec.prices[a];
            // In-service histogram always matches the counter.
            assert_eq!(
                state.in_service() as usize,
                state.z.min(m.spec.n),
                "non-idling violated"
            );
        }
        assert_eq!(admitted, departed + state.z as u64);
        assert!(revenue >= 0.0);
    }
}

#[test]
fn simulated_mean_matches_exact_evaluator() {
    let m = model(2, 1, 10, PenaltySpec::none());
    let policy = fixed_policy(&m, 5);
    let fullinfo = FullInfo::new(&m).unwrap();
    let exact = fullinfo.evaluate_count_policy(&policy).unwrap();
    let result = simulate_policy(&m, &policy, 400_000, 1234).unwrap();
    let gap = (result.mean - exact).abs();
    assert!(
        gap <= 4.0 * result.std_error,
        "sim {} vs exact {exact}: {gap} > 4se ({})",
        result.mean,
        result.std_error
    );
}

#[test]
fn overload_drives_late_violations_toward_one() {
    // Minimum price on an overloaded instance: late-period buffer
    // occupancy is near certain.
    let m = model(2, 2, 20, PenaltySpec {
        c: 0.0,
        k: 1.0,
        alpha: 0.05,
        zhat: 2,
    });
    let violations = estimate_violations(&m, &fixed_policy(&m, 0), 20_000, 5).unwrap();
    let late = violations.last().unwrap().0;
    assert!(late > 0.9, "late violation probability {late}");
}

#[test]
fn exhaustive_single_candidate_and_dominated_prices() {
    let m = model(2, 2, 10, PenaltySpec {
        c: 0.0,
        k: 1.0,
        alpha: 0.3,
        zhat: 2,
    });
    let blocks = vec![(0..m.space.counters).collect::<Vec<_>>()];
    let single = exhaustive_restricted(&m, &blocks, &[4], 2_000, 3, 3, 4_000).unwrap();
    assert_eq!(single.candidates_total, 1);
    assert_eq!(single.ranked.len(), 1);

    // Adding the reject price (strictly dominated here: it earns nothing
    // and the feasible earning prices exist) keeps the same winner.
    let base = exhaustive_restricted(&m, &blocks, &[8, 9], 20_000, 3, 3, 40_000).unwrap();
    let reject = m.spec.action_count() - 1;
    let wider =
        exhaustive_restricted(&m, &blocks, &[8, 9, reject], 20_000, 3, 3, 40_000).unwrap();
    assert!(base.winner().is_some(), "no feasible candidate in the base set");
    assert_eq!(
        base.winner().unwrap().block_prices,
        wider.winner().unwrap().block_prices
    );
}

#[test]
fn exhaustive_guard_refuses_large_classes() {
    let m = model(2, 2, 4, PenaltySpec::none());
    let blocks: Vec<Vec<usize>> = (0..m.space.counters).map(|z| vec![z]).collect();
    let prices: Vec<usize> = (0..m.spec.action_count()).collect();
    let err = exhaustive_restricted(&m, &blocks, &prices, 10, 1, 1, 10).unwrap_err();
    assert!(matches!(err, qdp::Error::Guard { .. }));
}

#[test]
fn block_policy_assigns_prices_by_block() {
    let m = model(2, 2, 4, PenaltySpec::none());
    let blocks = vec![vec![0, 1], vec![2, 3, 4]];
    let policy = block_policy(&m, &blocks, &[2, 7]);
    for t in 0..4 {
        assert_eq!(policy.action(t, 0), 2);
        assert_eq!(policy.action(t, 1), 2);
        assert_eq!(policy.action(t, 4), 7);
    }
}

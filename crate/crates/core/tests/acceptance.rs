//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured quantities (visible with `--nocapture`).
//!
//! A-criteria are exactly reproducible properties of the schemes;
//! B-criteria are envelope reproductions of the headline experiments with
//! the shipped piecewise-constant arrival shapes.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use qdp::backward::backward_sigma;
use qdp::baselines::fullinfo::FullInfo;
use qdp::baselines::geometric::{fit_truncated_geometric, CountMdp};
use qdp::baselines::qlearn::qlearn_aggregated;
use qdp::config::{InstanceConfig, NamedOrVector, PenaltyConfig};
use qdp::fisher::fisher_blocks;
use qdp::forward::forward_marginals;
use qdp::gradcheck;
use qdp::pmf::Pmf;
use qdp::policy::{
    approx_natural_gradient, exp_q_update, qbar, to_pure_policy, PurePolicy, QBarTable,
    SharingScheme,
};
use qdp::pricing::efficient::QplexEngine;
use qdp::pricing::kernel::label_pmf_old;
use qdp::pricing::{PenaltySpec, PricingModel};
use qdp::sim::{exhaustive_restricted, simulate_policy, ExhaustiveResult, SimResult};
use qdp::synth::{SynthSpec, SyntheticModel};
use qdp::train::{train, EpisodeEngine, TrainParams};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn budget(name: &str, started: Instant, limit: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed <= limit,
        "{name}: runtime {elapsed:?} exceeded the {limit:?} budget"
    );
}

fn instance(
    n: usize,
    b: usize,
    service: &str,
    shape: &str,
    c_w: f64,
    c_t: f64,
    penalty_c: f64,
    alpha: f64,
    prices: Option<Vec<f64>>,
) -> InstanceConfig {
    InstanceConfig {
        version: 1,
        n,
        b,
        horizon: 50,
        prices: prices.unwrap_or_else(qdp::pricing::default_prices),
        service_pmf: NamedOrVector::Named(service.to_string()),
        shape: NamedOrVector::Named(shape.to_string()),
        u_avg_max: 5.0,
        c_w,
        c_t,
        penalty: PenaltyConfig {
            c: penalty_c,
            k: 1.0,
            alpha,
            zhat: n,
        },
    }
}

// ---------------------------------------------------------------------------
// A-criteria: exactly reproducible properties
// ---------------------------------------------------------------------------

#[test]
fn a1_gradient_exactness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for trial in 0..200u64 {
        let horizon = rng.gen_range(2..=5);
        let states = rng.gen_range(2..=4);
        let actions = rng.gen_range(2..=3);
        let model =
            SyntheticModel::random(SynthSpec::nonlinear(horizon, states, actions), 7000 + trial);
        let experts = rng.gen_range(1..=states);
        let assignment: Vec<usize> = (0..states).map(|s| s % experts).collect();
        let policy = random_policy(&mut rng, horizon, experts, actions, assignment);
        let mu0 = random_pmf(&mut rng, states);
        worst = worst.max(gradcheck::gradient_check(&model, &policy, &mu0).unwrap());
    }
    assert!(
        worst <= 1e-6,
        "A1 FAIL: max relative gradient error {worst:.3e} > 1e-6"
    );
    budget("A1", started, Duration::from_secs(30));
    println!(
        "A1 PASS: 200 instances, max relative gradient error {worst:.3e} <= 1e-6 ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn a2_markov_reduction() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_sigma: f64 = 0.0;
    let mut worst_qbar: f64 = 0.0;
    for trial in 0..50u64 {
        let horizon = rng.gen_range(2..=5);
        let states = rng.gen_range(2..=4);
        let actions = rng.gen_range(2..=3);
        let model =
            SyntheticModel::random(SynthSpec::markov(horizon, states, actions), 8000 + trial);
        let policy = random_policy(&mut rng, horizon, states, actions, (0..states).collect());
        let mu0 = random_pmf(&mut rng, states);
        let trace = forward_marginals(&model, &policy, &mu0).unwrap();
        let sigmas = backward_sigma(&model, &policy, &trace).unwrap();
        let oracle = bellman_policy_values(&model, &policy, &trace.mu);
        for t in 0..=horizon {
            worst_sigma = worst_sigma.max(max_abs_diff(&sigmas.sigma[t], &oracle.v[t]));
        }
        let table = qbar(&model, &policy, &trace, &sigmas);
        for t in 0..horizon {
            for s in 0..states {
                if table.reach[t][s] == 0.0 {
                    continue;
                }
                for a in 0..actions {
                    worst_qbar =
                        worst_qbar.max((table.qbar[t][s][a] - oracle.q[t][s][a]).abs());
                }
            }
        }
    }
    assert!(
        worst_sigma <= 1e-12 && worst_qbar <= 1e-12,
        "A2 FAIL: sigma-vs-Bellman {worst_sigma:.3e}, Qbar-vs-values {worst_qbar:.3e}"
    );
    budget("A2", started, Duration::from_secs(5));
    println!(
        "A2 PASS: 50 Markov instances, sigma gap {worst_sigma:.3e}, Qbar gap {worst_qbar:.3e} <= 1e-12 ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn a3_kernel_and_sum_product_equivalence() {
    let started = Instant::now();
    // Kernel stochasticity over 1000 randomized evaluations.
    let config = instance(3, 3, "Uni", "DEC", 0.05, 1.0, 0.0, 0.05, None);
    let model = config.to_model().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut row = vec![0.0; model.space.len()];
    let mut worst_row: f64 = 0.0;
    for _ in 0..1000 {
        let mu = random_pmf(&mut rng, model.space.len());
        let s = rng.gen_range(0..model.space.len());
        let a = rng.gen_range(0..model.spec.action_count());
        let t = rng.gen_range(0..model.spec.horizon);
        qdp::model::NonlinearModel::kernel(&model, t, mu.as_slice(), s, a, &mut row);
        worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    assert!(
        worst_row <= 1e-12,
        "A3 FAIL: kernel row drift {worst_row:.3e} > 1e-12"
    );

    // Sum-product vs generic recursion on the pinned instance, from both a
    // random interior start and the empty system.
    let policy = random_policy(
        &mut rng,
        model.spec.horizon,
        model.space.counters,
        model.spec.action_count(),
        model.count_assignment(),
    );
    let interior = random_pmf(&mut rng, model.space.len());
    let worst_interior = gradcheck::equivalence_check(&model, &policy, &interior).unwrap();
    let worst_empty =
        gradcheck::equivalence_check(&model, &policy, &model.empty_start()).unwrap();
    let worst = worst_interior.max(worst_empty);
    assert!(
        worst <= 1e-10,
        "A3 FAIL: sum-product vs generic recursion gap {worst:.3e} > 1e-10"
    );
    budget("A3", started, Duration::from_secs(60));
    println!(
        "A3 PASS: kernel row drift {worst_row:.3e} <= 1e-12; equivalence gap {worst:.3e} <= 1e-10 on n=3,b=3,l=20,T=50 ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn a4_label_worked_example() {
    let shifted = label_pmf_old(&[0.1, 0.2, 0.3, 0.4]).unwrap();
    let expect = [2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0];
    let worst = max_abs_diff(&shifted, &expect);
    assert!(worst <= 1e-15, "A4 FAIL: label example off by {worst:.3e}");
    println!("A4 PASS: old-type label pmf matches (2/9, 1/3, 4/9, 0) to {worst:.3e} <= 1e-15");
}

#[test]
fn a5_fisher_recursion() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for trial in 0..5u64 {
        let model = SyntheticModel::random(SynthSpec::nonlinear(2, 2, 2), 9000 + trial);
        let policy = random_policy(&mut rng, 2, 2, 2, vec![0, 1]);
        let mu0 = random_pmf(&mut rng, 2);
        let trace = forward_marginals(&model, &policy, &mu0).unwrap();
        let blocks = fisher_blocks(&model, &policy, &trace).unwrap();
        let assembled = blocks.assemble();
        let oracle = fisher_by_enumeration(&model, &policy, &mu0);
        worst = worst.max((&assembled - &oracle).abs().max());
        min_eig = min_eig.min(
            assembled
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min),
        );
    }
    // Markov case: block-diagonal.
    let mut worst_offdiag: f64 = 0.0;
    for trial in 0..5u64 {
        let model = SyntheticModel::random(SynthSpec::markov(3, 2, 2), 9100 + trial);
        let policy = random_policy(&mut rng, 3, 2, 2, vec![0, 1]);
        let mu0 = random_pmf(&mut rng, 2);
        let trace = forward_marginals(&model, &policy, &mu0).unwrap();
        let blocks = fisher_blocks(&model, &policy, &trace).unwrap();
        for t1 in 0..3 {
            for t2 in (t1 + 1)..3 {
                worst_offdiag = worst_offdiag.max(blocks.block(t1, t2).abs().max());
            }
        }
    }
    assert!(
        worst <= 1e-10,
        "A5 FAIL: Fisher vs enumeration gap {worst:.3e} > 1e-10"
    );
    assert!(
        min_eig >= -1e-10,
        "A5 FAIL: assembled Fisher not PSD (min eigenvalue {min_eig:.3e})"
    );
    assert!(
        worst_offdiag == 0.0,
        "A5 FAIL: Markov off-diagonal blocks {worst_offdiag:.3e}"
    );
    budget("A5", started, Duration::from_secs(10));
    println!(
        "A5 PASS: enumeration gap {worst:.3e} <= 1e-10, min eigenvalue {min_eig:.3e} >= -1e-10, Markov off-diagonal {worst_offdiag:.1e} ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn a6_natural_gradient_identity() {
    use nalgebra::{DMatrix, DVector};
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_update: f64 = 0.0;
    let mut worst_pinv: f64 = 0.0;
    for _ in 0..100 {
        let actions = rng.gen_range(2..=6);
        let theta =
            Pmf::normalized((0..actions).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
        let reach = rng.gen_range(0.1..1.0);
        let qrow: Vec<f64> = (0..actions).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let eta = rng.gen_range(0.1..5.0);
        let table = QBarTable {
            qbar: vec![vec![qrow.clone()]],
            reach: vec![vec![reach]],
        };
        let policy = qdp::policy::PartitionedPolicy::new(
            vec![0],
            1,
            actions,
            vec![vec![theta.clone()]],
            None,
        )
        .unwrap();
        let updated = exp_q_update(&policy, &table, eta).unwrap();
        let centered = &approx_natural_gradient(&table)[0][0];
        // Softmax of (logits + eta * centered Qbar).
        let logits: Vec<f64> = (0..actions)
            .map(|a| theta.get(a).ln() + eta * centered[a])
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let softmax =
            Pmf::normalized(logits.iter().map(|l| (l - max).exp()).collect()).unwrap();
        for a in 0..actions {
            worst_update = worst_update.max((updated.row(0, 0).get(a) - softmax.get(a)).abs());
        }
        // Explicit block-pseudoinverse natural gradient.
        let mut fisher: DMatrix<f64> = DMatrix::zeros(actions, actions);
        for i in 0..actions {
            for j in 0..actions {
                let v = if i == j {
                    theta.get(i) - theta.get(i) * theta.get(j)
                } else {
                    -theta.get(i) * theta.get(j)
                };
                fisher[(i, j)] = reach * v;
            }
        }
        let grad = &fisher * DVector::from_vec(qrow);
        let eig = fisher.clone().symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut inv = eig.eigenvalues.clone();
        for v in inv.iter_mut() {
            *v = if *v > 1e-12 * max_eig { 1.0 / *v } else { 0.0 };
        }
        let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        let natural = pinv * grad;
        for a in 0..actions {
            worst_pinv = worst_pinv.max((natural[a] - centered[a]).abs());
        }
    }
    assert!(
        worst_update <= 1e-12,
        "A6 FAIL: update vs softmax identity {worst_update:.3e} > 1e-12"
    );
    assert!(
        worst_pinv <= 1e-8,
        "A6 FAIL: centered Qbar vs pseudoinverse {worst_pinv:.3e} > 1e-8"
    );
    println!(
        "A6 PASS: update-softmax identity {worst_update:.3e} <= 1e-12, pseudoinverse gap {worst_pinv:.3e} <= 1e-8"
    );
}

// ---------------------------------------------------------------------------
// B-criteria: envelope reproductions (shipped arrival shapes)
// ---------------------------------------------------------------------------

/// The large single-station instance family: n=20, b=5, UniM service, DEC
/// shape, waiting cost 0.1, terminal cost 1.5.
fn large_instance() -> &'static PricingModel {
    static MODEL: OnceLock<PricingModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        instance(20, 5, "UniM", "DEC", 0.1, 1.5, 0.0, 0.05, None)
            .to_model()
            .unwrap()
    })
}

/// QDP policy on the large instance (eta=1000, tolerance 1e-6), its QPLEX
/// value, and its simulated value at one million replications.
fn large_qdp() -> &'static (PurePolicy, f64, SimResult) {
    static FIXTURE: OnceLock<(PurePolicy, f64, SimResult)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let model = large_instance();
        let engine = QplexEngine::new(model);
        let trace = train(
            &engine,
            &model.uniform_count_policy(),
            &TrainParams {
                eta: 1000.0,
                epsilon: 1e-6,
                max_episodes: 5000,
                adaptive: false,
                snapshot_every: None,
            },
        )
        .unwrap();
        let pure = to_pure_policy(&trace.final_policy);
        let value = engine.evaluate(&pure).unwrap().total;
        let policy = PurePolicy::from_policy(&pure);
        let sim = simulate_policy(model, &policy, 1_000_000, 2024).unwrap();
        (policy, value, sim)
    })
}

#[test]
fn b1_geometric_optimality() {
    let started = Instant::now();
    let mut worst_gap: f64 = 0.0;
    let mut worst_cell = String::new();
    for &n in &[20usize, 40] {
        for &mean in &[10.5, 15.5, 18.0] {
            for shape in ["DEC", "CON"] {
                let g = fit_truncated_geometric(mean).unwrap();
                let mut config = instance(n, 5, "Uni", shape, 0.1, 1.5, 0.0, 0.05, None);
                config.service_pmf = NamedOrVector::Vector(g.as_slice().to_vec());
                let model = config.to_model().unwrap();
                let engine = QplexEngine::new(&model);
                let trace = train(
                    &engine,
                    &model.uniform_count_policy(),
                    &TrainParams {
                        eta: 100.0,
                        epsilon: 1e-6,
                        max_episodes: 3000,
                        adaptive: false,
                        snapshot_every: None,
                    },
                )
                .unwrap();
                let policy = PurePolicy::from_policy(&to_pure_policy(&trace.final_policy));
                let mdp = CountMdp::new(&model);
                let optimum = mdp.bellman_optimal().value;
                let value = mdp.evaluate(&policy).unwrap();
                let gap = (optimum - value) / optimum.abs();
                if gap > worst_gap {
                    worst_gap = gap;
                    worst_cell = format!("n={n} mean={mean} {shape}");
                }
            }
        }
    }
    assert!(
        worst_gap <= 1e-5,
        "B1 FAIL: relative optimality gap {worst_gap:.3e} > 1e-5 at {worst_cell}"
    );
    budget("B1", started, Duration::from_secs(600));
    println!(
        "B1 PASS: 12 truncated-geometric cells, worst relative gap {worst_gap:.3e} <= 1e-5 ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn b2_full_information_envelope() {
    let started = Instant::now();
    // 24 cells at n=3, b=3: every service pmf crossed with every shipped
    // shape at (c_W, c_T) = (0.05, 1.0), plus both cost levels on the DEC
    // and INC shapes.
    let mut cells = Vec::new();
    for service in ["Uni", "UniM", "UniH", "BB"] {
        for shape in ["DEC", "INC", "ALT", "CON"] {
            cells.push((service, shape, 0.05, 1.0));
        }
        for shape in ["DEC", "INC"] {
            cells.push((service, shape, 0.1, 1.5));
        }
    }
    assert_eq!(cells.len(), 24);
    let mut worst_forward: f64 = 0.0;
    let mut worst_bound: f64 = 0.0;
    let mut worst_extract: f64 = 0.0;
    for (service, shape, c_w, c_t) in cells {
        let model = instance(3, 3, service, shape, c_w, c_t, 0.0, 0.05, None)
            .to_model()
            .unwrap();
        let engine = QplexEngine::new(&model);
        let trace = train(
            &engine,
            &model.uniform_count_policy(),
            &TrainParams {
                eta: 1.0,
                epsilon: 1e-6,
                max_episodes: 10_000,
                adaptive: false,
                snapshot_every: None,
            },
        )
        .unwrap();
        let pure = to_pure_policy(&trace.final_policy);
        let v_qplex = engine.evaluate(&pure).unwrap().total;
        let policy = PurePolicy::from_policy(&pure);
        let fullinfo = FullInfo::new(&model).unwrap();
        let v_exact = fullinfo.evaluate_count_policy(&policy).unwrap();
        let solution = fullinfo.bellman_optimal();
        let extracted = fullinfo.extract_count_policy(&solution);
        let v_extract = fullinfo.evaluate_count_policy(&extracted).unwrap();

        let forward_err = ((v_exact - v_qplex) / v_exact).abs();
        let bound = (solution.value - v_exact) / solution.value;
        let extract_gap = ((v_extract - v_exact) / v_extract).abs();
        worst_forward = worst_forward.max(forward_err);
        worst_bound = worst_bound.max(bound);
        worst_extract = worst_extract.max(extract_gap);
        assert!(
            forward_err <= 0.01,
            "B2 FAIL(i): |v_qplex-v_exact|/|v_exact| = {forward_err:.4} > 1% on {service}/{shape} c_W={c_w} c_T={c_t}"
        );
        assert!(
            bound <= 0.05,
            "B2 FAIL(ii): optimality gap bound {bound:.4} > 5% on {service}/{shape} c_W={c_w} c_T={c_t}"
        );
        assert!(
            extract_gap <= 0.005,
            "B2 FAIL(iii): extracted-vs-QDP gap {extract_gap:.4} > 0.5% on {service}/{shape} c_W={c_w} c_T={c_t}"
        );
    }
    budget("B2", started, Duration::from_secs(1800));
    println!(
        "B2 PASS: 24 cells; worst forward error {worst_forward:.4} <= 1%, worst gap bound {worst_bound:.4} <= 5%, worst extract gap {worst_extract:.4} <= 0.5% ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn b3_training_efficiency() {
    let started = Instant::now();
    let model = instance(3, 3, "Uni", "DEC", 0.05, 1.5, 0.0, 0.05, None)
        .to_model()
        .unwrap();
    let engine = QplexEngine::new(&model);
    let mut episodes = Vec::new();
    let mut values = Vec::new();
    for &eta in &[1.0, 10.0, 100.0, 1000.0] {
        let trace = train(
            &engine,
            &model.uniform_count_policy(),
            &TrainParams {
                eta,
                epsilon: 1e-6,
                max_episodes: 10_000,
                adaptive: false,
                snapshot_every: None,
            },
        )
        .unwrap();
        let pure = to_pure_policy(&trace.final_policy);
        episodes.push(trace.episodes.len());
        values.push(engine.evaluate(&pure).unwrap().total);
    }
    for w in episodes.windows(2) {
        assert!(
            w[1] < w[0],
            "B3 FAIL: episode counts not strictly decreasing: {episodes:?}"
        );
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = (max - min) / max.abs();
    assert!(
        spread <= 1e-3,
        "B3 FAIL: final values spread {spread:.4e} > 0.1%: {values:?}"
    );
    budget("B3", started, Duration::from_secs(60));
    println!(
        "B3 PASS: episodes {episodes:?} strictly decreasing, value spread {spread:.2e} <= 0.1% ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn b4_simulation_consistency() {
    let started = Instant::now();
    let (_, v_qplex, sim) = large_qdp();
    let gap = (sim.mean - v_qplex).abs();
    assert!(
        gap <= 3.0 * sim.std_error,
        "B4 FAIL: |sim {} - qplex {v_qplex}| = {gap:.4} > 3 se ({:.4})",
        sim.mean,
        3.0 * sim.std_error
    );
    budget("B4", started, Duration::from_secs(300));
    println!(
        "B4 PASS: simulated {:.4} vs forward value {v_qplex:.4}, gap {gap:.4} <= 3 se = {:.4} at 1e6 reps ({:.1?})",
        sim.mean,
        3.0 * sim.std_error,
        started.elapsed()
    );
}

#[test]
fn b5_qlearning_inferiority() {
    let started = Instant::now();
    let model = large_instance();
    let (_, _, qdp_sim) = large_qdp();
    let rates = [0.1, 0.05, 0.025, 0.01, 0.005, 0.0025];
    let result = qlearn_aggregated(model, &rates, 1_000_000, 100_000, 20_000, 99).unwrap();
    let best = result.best();
    let shortfall = (qdp_sim.mean - best.best_value) / qdp_sim.mean;
    assert!(
        shortfall >= 0.05,
        "B5 FAIL: best aggregated Q-learning value {:.4} is within 5% of the QDP value {:.4}",
        best.best_value,
        qdp_sim.mean
    );
    budget("B5", started, Duration::from_secs(1800));
    println!(
        "B5 PASS: best Q-learning value {:.4} (rate {}) vs QDP {:.4}: {:.1}% below ({:.1?})",
        best.best_value,
        best.rate,
        qdp_sim.mean,
        100.0 * shortfall,
        started.elapsed()
    );
}

/// Restricted class of the exhaustive comparison: four counter blocks on
/// the 26-counter instance and six prices.
fn restricted_blocks() -> Vec<Vec<usize>> {
    vec![
        (0..=10).collect(),
        (11..=15).collect(),
        (16..=20).collect(),
        (21..=25).collect(),
    ]
}

fn restricted_prices() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.1]
}

/// Chance-constrained variant of the large instance: no waiting/terminal
/// costs, penalty C=100, k=1, alpha=0.05 on the buffer-nonempty event.
fn constrained_instance() -> &'static PricingModel {
    static MODEL: OnceLock<PricingModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        instance(20, 5, "UniM", "DEC", 0.0, 0.0, 100.0, 0.05, None)
            .to_model()
            .unwrap()
    })
}

/// Exhaustive search over the restricted class on the chance-constrained
/// instance: 1296 candidates at 1e5 replications, top six refined at 1e6.
fn b7_search() -> &'static ExhaustiveResult {
    static RESULT: OnceLock<ExhaustiveResult> = OnceLock::new();
    RESULT.get_or_init(|| {
        let model = constrained_instance();
        let price_indices: Vec<usize> = restricted_prices()
            .iter()
            .map(|p| {
                model
                    .spec
                    .prices
                    .iter()
                    .position(|q| (q - p).abs() < 1e-9)
                    .unwrap()
            })
            .collect();
        exhaustive_restricted(
            model,
            &restricted_blocks(),
            &price_indices,
            100_000,
            777,
            6,
            1_000_000,
        )
        .unwrap()
    })
}

#[test]
fn b6_chance_constraint_quality() {
    let started = Instant::now();
    let model = constrained_instance();
    let engine = QplexEngine::new(model);
    let trace = train(
        &engine,
        &model.uniform_count_policy(),
        &TrainParams {
            eta: 1.0,
            epsilon: 1e-6,
            max_episodes: 5000,
            adaptive: false,
            snapshot_every: None,
        },
    )
    .unwrap();
    let policy = PurePolicy::from_policy(&to_pure_policy(&trace.final_policy));
    let sim = simulate_policy(model, &policy, 1_000_000, 31).unwrap();
    let alpha = model.spec.penalty.alpha;
    let max_violation = sim.max_violation();
    assert!(
        max_violation <= alpha + 0.005,
        "B6 FAIL: max simulated violation {max_violation:.4} > alpha + 0.005 = {:.4}",
        alpha + 0.005
    );
    let winner = b7_search().winner().expect("a feasible restricted policy");
    let winner_value = winner.refined.as_ref().unwrap().mean;
    assert!(
        sim.revenue > winner_value,
        "B6 FAIL: penalized-QDP revenue {:.4} does not exceed the restricted-class best {winner_value:.4}",
        sim.revenue
    );
    budget("B6", started, Duration::from_secs(900));
    println!(
        "B6 PASS: max violation {max_violation:.4} <= {:.4}, revenue {:.4} > restricted best {winner_value:.4} ({:.1?})",
        alpha + 0.005,
        sim.revenue,
        started.elapsed()
    );
}

#[test]
fn b7_restricted_class_agreement() {
    let started = Instant::now();
    let search = b7_search();
    assert_eq!(search.candidates_total, 1296);
    let winner = search.winner().expect("a feasible candidate");
    let winner_sim = winner.refined.as_ref().unwrap();

    // Shared-parameter QDP on the restricted price grid.
    let model = instance(
        20,
        5,
        "UniM",
        "DEC",
        0.0,
        0.0,
        100.0,
        0.05,
        Some(restricted_prices()),
    )
    .to_model()
    .unwrap();
    let engine = QplexEngine::new(&model);
    let mut init = model.uniform_count_policy();
    init.set_sharing(Some(SharingScheme {
        z_blocks: restricted_blocks(),
        t_blocks: vec![(0..model.spec.horizon).collect()],
    }))
    .unwrap();
    let trace = train(
        &engine,
        &init,
        &TrainParams {
            eta: 0.001,
            epsilon: 1e-6,
            max_episodes: 100,
            adaptive: false,
            snapshot_every: None,
        },
    )
    .unwrap();
    let policy = PurePolicy::from_policy(&to_pure_policy(&trace.final_policy));
    let qdp_sim = simulate_policy(&model, &policy, 1_000_000, 4242).unwrap();

    // Each halfwidth is already three standard errors; the tie criterion is
    // the combined three-standard-error halfwidth.
    let combined = (winner_sim.ci_halfwidth.powi(2) + qdp_sim.ci_halfwidth.powi(2)).sqrt();
    let gap = (qdp_sim.mean - winner_sim.mean).abs();
    assert!(
        gap <= combined,
        "B7 FAIL: shared-parameter QDP {:.4} vs exhaustive winner {:.4}: gap {gap:.4} beyond combined 3-se halfwidth {combined:.4}",
        qdp_sim.mean,
        winner_sim.mean
    );
    budget("B7", started, Duration::from_secs(3600));
    println!(
        "B7 PASS: QDP {:.4} ties exhaustive winner {:.4} (prices {:?}) within {combined:.4} ({:.1?})",
        qdp_sim.mean,
        winner_sim.mean,
        winner
            .block_prices
            .iter()
            .map(|&a| model.spec.prices[a])
            .collect::<Vec<_>>(),
        started.elapsed()
    );
}

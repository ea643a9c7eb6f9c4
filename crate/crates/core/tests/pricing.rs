//! Pricing-model tests: chain-rule kernel factors against brute-force
//! oracles, reward pieces, analytic xi-derivatives against finite
//! differences, and the sum-product path against the generic recursions.

mod common;

use common::*;
use qdp::backward::backward_sigma;
use qdp::forward::{expected_total_reward, forward_marginals};
use qdp::model::NonlinearModel;
use qdp::pmf::Pmf;
use qdp::policy::qbar;
use qdp::pricing::efficient::{efficient_sigma_step, QplexEngine};
use qdp::pricing::kernel::{
    departures_pmf, kernel_conditional, kernel_xi_grad_dot, label_pmf_old, routing_pmf,
    type_old_prob,
};
use qdp::pricing::reward::{revenue, revenue_xi1_deriv};
use qdp::pricing::{
    build_arrival_table, default_prices, PenaltySpec, PricingModel, PricingSpec,
};
use qdp::train::EpisodeEngine;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model_with(
    n: usize,
    b: usize,
    horizon: usize,
    service: Pmf,
    penalty: PenaltySpec,
) -> PricingModel {
    let prices = default_prices();
    let mean = service
        .iter()
        .enumerate()
        .map(|(i, &g)| (i + 1) as f64 * g)
        .sum::<f64>();
    let shape: Vec<f64> = (0..horizon)
        .map(|t| if t < horizon / 2 { 1.4 } else { 0.6 })
        .collect();
    let lambda = build_arrival_table(&shape, 5.0, n, mean, &prices).unwrap();
    PricingModel::new(PricingSpec {
        n,
        b,
        horizon,
        prices,
        service,
        lambda,
        c_w: 0.1,
        c_t: 1.5,
        penalty,
        size_table: None,
    })
    .unwrap()
}

fn small_service() -> Pmf {
    Pmf::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap()
}

fn random_xi<R: Rng>(rng: &mut R, labels: usize) -> Vec<f64> {
    Pmf::normalized((0..labels).map(|_| rng.gen_range(0.05..1.0)).collect())
        .unwrap()
        .into_vec()
}

// ---------------------------------------------------------------------------
// Kernel factors
// ---------------------------------------------------------------------------

#[test]
fn departures_edge_cases() {
    let model = model_with(3, 2, 4, small_service(), PenaltySpec::none());
    // Empty system: point mass at zero departures.
    let xi = vec![0.5, 0.5, 0.0, 0.0];
    assert_eq!(departures_pmf(&model, &xi, 0), vec![1.0]);
    // x=2, xi(1)=0.5: (0.25, 0.5, 0.25).
    let qd = departures_pmf(&model, &xi, 2);
    assert!(max_abs_diff(&qd, &[0.25, 0.5, 0.25]) < 1e-15);
    // Certain completion.
    let xi = vec![1.0, 0.0, 0.0, 0.0];
    let qd = departures_pmf(&model, &xi, 5);
    assert_eq!(qd, vec![0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn routing_poisson_cells_and_survival() {
    // n+b = 2, lambda = 1, z = 0, d = 0: (e^-1, e^-1, 1 - 2e^-1).
    let prices = default_prices();
    let lambda = vec![vec![1.0; prices.len()]; 1];
    let model = PricingModel::new(PricingSpec {
        n: 1,
        b: 1,
        horizon: 1,
        prices,
        service: small_service(),
        lambda,
        c_w: 0.0,
        c_t: 0.0,
        penalty: PenaltySpec::none(),
        size_table: None,
    })
    .unwrap();
    let rho = routing_pmf(&model, 0, 0, 0, 0);
    let e = (-1.0_f64).exp();
    assert!(max_abs_diff(&rho, &[e, e, 1.0 - 2.0 * e]) < 1e-15);

    // Reject price: no arrivals, point mass at z - d.
    let model = model_with(3, 2, 4, small_service(), PenaltySpec::none());
    let reject = model.spec.action_count() - 1;
    let rho = routing_pmf(&model, 0, 4, 2, reject);
    let mut expect = vec![0.0; 6];
    expect[2] = 1.0;
    assert_eq!(rho, expect);

    // Rows sum to one for randomized inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let z = rng.gen_range(0..6);
        let d = rng.gen_range(0..=model.spec.size_fn(z));
        let a = rng.gen_range(0..model.spec.action_count());
        let t = rng.gen_range(0..4);
        let rho = routing_pmf(&model, t, z, d, a);
        let sum: f64 = rho.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "routing sum {sum}");
    }
}

#[test]
fn type_probabilities() {
    let model = model_with(3, 3, 4, small_service(), PenaltySpec::none());
    // Next system empty: all new.
    assert_eq!(type_old_prob(&model, 2, 2, 0), 0.0);
    // All in service complete: all new.
    assert_eq!(type_old_prob(&model, 2, 2, 3), 0.0);
    // n=3, z=3, d=1, z'=4: old 2/3.
    assert!((type_old_prob(&model, 3, 1, 4) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn label_pmf_edges() {
    // New labels are fresh service draws.
    let g = small_service();
    assert_eq!(qdp::pricing::kernel::label_pmf_new(&g), g.as_slice().to_vec());
    // Point mass at 5 counts down to 4.
    let xi = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let shifted = label_pmf_old(&xi).unwrap();
    assert_eq!(shifted, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

/// Brute-force kernel oracle: the four nested sums evaluated term by term
/// with its own Poisson evaluation.
fn kernel_brute_force(
    model: &PricingModel,
    t: usize,
    xi: &[f64],
    z: usize,
    a: usize,
) -> Vec<f64> {
    let space = model.space;
    let labels = space.labels;
    let cap = model.spec.n + model.spec.b;
    let x = model.spec.size_fn(z);
    let lambda = model.spec.lambda[t][a];
    let pois_pmf = |y: i64| -> f64 {
        if y < 0 {
            return 0.0;
        }
        let mut v = (-lambda).exp();
        for k in 1..=y {
            v *= lambda / k as f64;
        }
        v
    };
    let mut out = vec![0.0; space.len()];
    for d in 0..=x {
        let qd = qdp::pricing::kernel::binomial_pmf(x, xi[0], d);
        for z_next in 0..space.counters {
            let rho = if z_next < cap {
                pois_pmf(z_next as i64 + d as i64 - z as i64)
            } else {
                let threshold = cap as i64 + d as i64 - z as i64;
                1.0 - (0..threshold).map(pois_pmf).sum::<f64>()
            };
            for k_new in [false, true] {
                let q_type = if k_new {
                    1.0 - type_old_prob(model, z, d, z_next)
                } else {
                    type_old_prob(model, z, d, z_next)
                };
                if q_type == 0.0 {
                    continue;
                }
                for l_next in 1..=labels {
                    let q_label = if k_new {
                        model.spec.service.get(l_next - 1)
                    } else {
                        if xi[0] >= 1.0 {
                            continue;
                        }
                        if l_next < labels {
                            xi[l_next] / (1.0 - xi[0])
                        } else {
                            0.0
                        }
                    };
                    out[space.index(z_next, l_next)] += qd * rho * q_type * q_label;
                }
            }
        }
    }
    out
}

#[test]
fn kernel_matches_brute_force_and_ignores_label() {
    let model = model_with(3, 2, 4, small_service(), PenaltySpec::none());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut row = vec![0.0; model.space.len()];
    for _ in 0..60 {
        let z = rng.gen_range(0..model.space.counters);
        let a = rng.gen_range(0..model.spec.action_count());
        let t = rng.gen_range(0..4);
        let xi = random_xi(&mut rng, model.space.labels);
        kernel_conditional(&model, t, &xi, z, a, &mut row);
        let oracle = kernel_brute_force(&model, t, &xi, z, a);
        assert!(
            max_abs_diff(&row, &oracle) < 1e-14,
            "kernel differs from nested-sum oracle"
        );
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    // The composed kernel never reads the incoming label: rows for (z, l1)
    // and (z, l2) are bitwise identical through the model interface.
    let mut mu = vec![0.0; model.space.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in mu.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let total: f64 = mu.iter().sum();
    for v in mu.iter_mut() {
        *v /= total;
    }
    let mut row1 = vec![0.0; model.space.len()];
    let mut row2 = vec![0.0; model.space.len()];
    for z in 0..model.space.counters {
        model.kernel(1, &mu, model.space.index(z, 1), 3, &mut row1);
        model.kernel(1, &mu, model.space.index(z, 3), 3, &mut row2);
        assert_eq!(row1, row2);
    }
}

#[test]
fn certain_completion_drops_old_contributions() {
    let model = model_with(2, 2, 3, small_service(), PenaltySpec::none());
    let xi = vec![1.0, 0.0, 0.0, 0.0];
    let mut row = vec![0.0; model.space.len()];
    kernel_conditional(&model, 0, &xi, 2, 4, &mut row);
    let sum: f64 = row.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
    // Every landed label is a fresh draw: conditional over labels equals g.
    for z_next in 0..model.space.counters {
        let mass: f64 = (1..=4).map(|l| row[model.space.index(z_next, l)]).sum();
        if mass > 1e-14 {
            for l in 1..=4 {
                let cond = row[model.space.index(z_next, l)] / mass;
                assert!((cond - model.spec.service.get(l - 1)).abs() < 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// xi-derivatives
// ---------------------------------------------------------------------------

#[test]
fn kernel_xi_gradient_matches_finite_differences() {
    let model = model_with(3, 2, 4, small_service(), PenaltySpec::none());
    let labels = model.space.labels;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut grad = vec![0.0; labels];
    for _ in 0..25 {
        let z = rng.gen_range(1..model.space.counters);
        let a = rng.gen_range(0..model.spec.action_count());
        let t = rng.gen_range(0..4);
        let xi = random_xi(&mut rng, labels);
        let weights: Vec<f64> = (0..model.space.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        kernel_xi_grad_dot(&model, t, &xi, z, a, &weights, &mut grad);

        let eval = |xi_pert: &[f64]| -> f64 {
            let mut row = vec![0.0; model.space.len()];
            kernel_conditional(&model, t, xi_pert, z, a, &mut row);
            row.iter().zip(weights.iter()).map(|(p, w)| p * w).sum()
        };
        let h = 1e-6;
        for l1 in 0..labels {
            for l2 in (l1 + 1)..labels {
                let mut up = xi.clone();
                up[l1] += h;
                up[l2] -= h;
                let mut down = xi.clone();
                down[l1] -= h;
                down[l2] += h;
                let fd = (eval(&up) - eval(&down)) / (2.0 * h);
                let an = grad[l1] - grad[l2];
                assert!(
                    (fd - an).abs() / an.abs().max(1.0) < 1e-6,
                    "xi-gradient mismatch ({l1},{l2}): fd={fd} an={an}"
                );
            }
        }
    }
}

#[test]
fn revenue_xi_derivative_matches_finite_differences() {
    let model = model_with(3, 2, 4, small_service(), PenaltySpec::none());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..25 {
        let z = rng.gen_range(1..model.space.counters);
        let a = rng.gen_range(0..model.spec.action_count() - 1);
        let t = rng.gen_range(0..4);
        let xi = random_xi(&mut rng, model.space.labels);
        let deriv = revenue_xi1_deriv(&model, t, &xi, z, a);
        let h = 1e-6;
        // The revenue reads xi(1) only; perturb along (e_1 - e_2).
        let mut up = xi.clone();
        up[0] += h;
        up[1] -= h;
        let mut down = xi.clone();
        down[0] -= h;
        down[1] += h;
        let fd = (revenue(&model, t, &up, z, a) - revenue(&model, t, &down, z, a)) / (2.0 * h);
        assert!(
            (fd - deriv).abs() / deriv.abs().max(1.0) < 1e-6,
            "revenue derivative mismatch: fd={fd} an={deriv}"
        );
    }
}

#[test]
fn conditional_gradient_lemma_via_model_partials() {
    // The model's mu-partials implement 1(z = z~)/mu(z~) times the centered
    // xi-partial; check against ambient central differences of the kernel.
    let model = model_with(2, 2, 3, small_service(), PenaltySpec::none());
    let space = model.space;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mu = vec![0.0; space.len()];
    for v in mu.iter_mut() {
        *v = rng.gen_range(0.02..1.0);
    }
    let total: f64 = mu.iter().sum();
    for v in mu.iter_mut() {
        *v /= total;
    }
    let mut row_up = vec![0.0; space.len()];
    let mut row_down = vec![0.0; space.len()];
    let h = 1e-6;
    for _ in 0..40 {
        let s = rng.gen_range(0..space.len());
        let a = rng.gen_range(0..model.spec.action_count());
        let s_next = rng.gen_range(0..space.len());
        let sp = rng.gen_range(0..space.len());
        let mut up = mu.clone();
        up[sp] += h;
        let mut down = mu.clone();
        down[sp] -= h;
        model.kernel(1, &up, s, a, &mut row_up);
        model.kernel(1, &down, s, a, &mut row_down);
        let fd = (row_up[s_next] - row_down[s_next]) / (2.0 * h);
        let an = model.kernel_mu_partial(1, &mu, s, a, s_next, sp);
        assert!(
            (fd - an).abs() / an.abs().max(1.0) < 1e-7,
            "conditional-gradient mismatch: fd={fd} an={an}"
        );
    }
}

// ---------------------------------------------------------------------------
// Efficient path against the generic recursions
// ---------------------------------------------------------------------------

fn interior_start(model: &PricingModel, seed: u64) -> Pmf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Pmf::normalized(
        (0..model.space.len())
            .map(|_| rng.gen_range(0.05..1.0))
            .collect(),
    )
    .unwrap()
}

#[test]
fn efficient_path_matches_generic_recursions() {
    for (penalty, seed) in [
        (PenaltySpec::none(), 13),
        (
            PenaltySpec {
                c: 50.0,
                k: 1.0,
                alpha: 0.02,
                zhat: 2,
            },
            17,
        ),
        (
            PenaltySpec {
                c: 25.0,
                k: 2.0,
                alpha: 0.01,
                zhat: 3,
            },
            19,
        ),
    ] {
        let model = model_with(2, 2, 6, small_service(), penalty);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = random_policy(
            &mut rng,
            6,
            model.space.counters,
            model.spec.action_count(),
            model.count_assignment(),
        );
        let mu0 = interior_start(&model, seed + 1);

        let trace = forward_marginals(&model, &policy, &mu0).unwrap();
        let sigmas = backward_sigma(&model, &policy, &trace).unwrap();
        let table = qbar(&model, &policy, &trace, &sigmas);
        let decomposition = expected_total_reward(&model, &policy, &trace);

        let engine = QplexEngine::with_start(&model, mu0.clone());
        let episode = engine.episode(&policy).unwrap();

        for t in 0..=6 {
            assert!(
                max_abs_diff(episode.trace.mu[t].as_slice(), trace.mu[t].as_slice()) < 1e-12,
                "marginals differ at t={t}"
            );
            assert!(
                max_abs_diff(&episode.sigmas.sigma[t], &sigmas.sigma[t]) < 1e-10,
                "sigma differs at t={t}"
            );
        }
        for t in 0..6 {
            for z in 0..model.space.counters {
                assert!((episode.qbar.reach[t][z] - table.reach[t][z]).abs() < 1e-12);
                for a in 0..model.spec.action_count() {
                    assert!(
                        (episode.qbar.qbar[t][z][a] - table.qbar[t][z][a]).abs() < 1e-10,
                        "qbar differs at t={t} z={z} a={a}"
                    );
                }
            }
        }
        assert!((episode.reward.total - decomposition.total).abs() < 1e-10);
        for (name, value) in &decomposition.components {
            assert!((episode.reward.component(name) - value).abs() < 1e-10, "{name}");
        }
    }
}

#[test]
fn efficient_sigma_step_signature_matches_engine() {
    let model = model_with(2, 1, 3, small_service(), PenaltySpec::none());
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let policy = random_policy(
        &mut rng,
        3,
        model.space.counters,
        model.spec.action_count(),
        model.count_assignment(),
    );
    let mu0 = interior_start(&model, 29);
    let trace = forward_marginals(&model, &policy, &mu0).unwrap();
    let sigmas = backward_sigma(&model, &policy, &trace).unwrap();
    let (sigma1, _) = efficient_sigma_step(
        &model,
        1,
        trace.mu[1].as_slice(),
        &policy.theta()[1],
        &sigmas.sigma[2],
    );
    assert!(max_abs_diff(&sigma1, &sigmas.sigma[1]) < 1e-10);
}

#[test]
fn degenerate_deterministic_service_reduces_to_count_mdp() {
    // Service always takes one period: the label conditional is a point
    // mass, the kernel ignores mu, and sigma must equal the count-MDP value
    // function of the policy.
    let service = Pmf::new(vec![1.0]).unwrap();
    let model = model_with(2, 2, 5, service, PenaltySpec::none());
    assert_eq!(model.space.labels, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let policy = random_policy(
        &mut rng,
        5,
        model.space.counters,
        model.spec.action_count(),
        model.count_assignment(),
    );
    let mu0 = model.empty_start();
    let trace = forward_marginals(&model, &policy, &mu0).unwrap();
    let oracle = bellman_policy_values(&model, &policy, &trace.mu);

    let engine = QplexEngine::new(&model);
    let episode = engine.episode(&policy).unwrap();
    for t in 0..=5 {
        assert!(
            max_abs_diff(&episode.sigmas.sigma[t], &oracle.v[t]) < 1e-10,
            "sigma differs from count-MDP values at t={t}"
        );
    }
}

#[test]
fn empty_start_marginal_identities() {
    // From the empty system the counter marginal at t=1 follows the arrival
    // distribution at the played prices.
    let model = model_with(3, 2, 4, small_service(), PenaltySpec::none());
    let policy = model.uniform_count_policy();
    let engine = QplexEngine::new(&model);
    let episode = engine.episode(&policy).unwrap();
    let mu1 = episode.trace.mu[1].as_slice();
    let n_actions = model.spec.action_count();
    for z in 0..model.space.counters {
        let mass = model.space.counter_marginal(mu1, z);
        let mut expect = 0.0;
        for a in 0..n_actions {
            let pois = model.poisson(0, a);
            let w = 1.0 / n_actions as f64;
            expect += w
                * if z < model.spec.n + model.spec.b {
                    pois.pmf[z]
                } else {
                    pois.survival[z]
                };
        }
        assert!((mass - expect).abs() < 1e-12, "z={z}: {mass} vs {expect}");
    }
}

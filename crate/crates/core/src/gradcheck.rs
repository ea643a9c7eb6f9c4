//! Verification suites behind the `gradcheck` command: finite-difference
//! checks of the backward scheme, Fisher structure invariants, pricing
//! kernel stochasticity, and the naive/sum-product equivalence.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backward::{backward_sigma, policy_gradient};
use crate::error::Result;
use crate::fisher::fisher_blocks;
use crate::forward::{expected_total_reward, forward_marginals};
use crate::model::NonlinearModel;
use crate::pmf::Pmf;
use crate::policy::{qbar, PartitionedPolicy};
use crate::pricing::efficient::QplexEngine;
use crate::pricing::kernel::{kernel_conditional, kernel_xi_grad_dot};
use crate::pricing::{
    build_arrival_table, default_prices, PenaltySpec, PricingModel, PricingSpec,
};
use crate::synth::{SynthSpec, SyntheticModel};
use crate::train::EpisodeEngine;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub trials: usize,
    /// Largest scaled relative error of the policy gradient against
    /// simplex-tangent central finite differences.
    pub max_gradient_error: f64,
    /// Largest scaled relative error of sigma against finite differences of
    /// the tail objective.
    pub max_sigma_error: f64,
    /// Largest asymmetry and most negative eigenvalue of assembled Fisher
    /// matrices.
    pub max_fisher_asymmetry: f64,
    pub min_fisher_eigenvalue: f64,
    /// Largest off-diagonal block magnitude in the Markov case.
    pub max_markov_offdiag: f64,
    /// Largest deviation of pricing kernel row sums from one.
    pub max_kernel_row_drift: f64,
    /// Largest elementwise gap between the sum-product and generic sigma.
    pub max_equivalence_error: f64,
    /// Largest scaled relative error of the analytic xi-gradient.
    pub max_xi_gradient_error: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const GRADIENT_TOL: f64 = 1e-6;
pub const SIGMA_TOL: f64 = 1e-6;
pub const FISHER_PSD_TOL: f64 = 1e-10;
pub const KERNEL_ROW_TOL: f64 = 1e-12;
pub const EQUIVALENCE_TOL: f64 = 1e-10;
pub const XI_GRADIENT_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

fn random_interior_policy<R: Rng>(
    rng: &mut R,
    horizon: usize,
    experts: usize,
    actions: usize,
    assignment: Vec<usize>,
) -> PartitionedPolicy {
    let theta = (0..horizon)
        .map(|_| {
            (0..experts)
                .map(|_| {
                    Pmf::normalized((0..actions).map(|_| rng.gen_range(0.1..1.0)).collect())
                        .unwrap()
                })
                .collect()
        })
        .collect();
    PartitionedPolicy::new(assignment, experts, actions, theta, None).unwrap()
}

fn random_pmf<R: Rng>(rng: &mut R, len: usize) -> Pmf {
    Pmf::normalized((0..len).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap()
}

/// Maximum scaled relative error of the analytic policy gradient against
/// central finite differences along simplex-tangent directions.
pub fn gradient_check(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    mu0: &Pmf,
) -> Result<f64> {
    let trace = forward_marginals(model, policy, mu0)?;
    let sigmas = backward_sigma(model, policy, &trace)?;
    let grad = policy_gradient(model, policy, &trace, &sigmas);
    let objective = |p: &PartitionedPolicy| -> Result<f64> {
        let trace = forward_marginals(model, p, mu0)?;
        Ok(expected_total_reward(model, p, &trace).total)
    };
    let mut worst: f64 = 0.0;
    let actions = policy.action_count();
    for t in 0..policy.horizon() {
        for z in 0..policy.expert_count() {
            for a1 in 0..actions {
                for a2 in (a1 + 1)..actions {
                    let perturb = |sign: f64| -> Result<f64> {
                        let mut theta = policy.theta().clone();
                        let mut row = theta[t][z].as_slice().to_vec();
                        row[a1] += sign * FD_STEP;
                        row[a2] -= sign * FD_STEP;
                        theta[t][z] = Pmf::new(row)?;
                        objective(&PartitionedPolicy::new(
                            policy.assignment().to_vec(),
                            policy.expert_count(),
                            actions,
                            theta,
                            None,
                        )?)
                    };
                    let fd = (perturb(1.0)? - perturb(-1.0)?) / (2.0 * FD_STEP);
                    let analytic = grad[t][z][a1] - grad[t][z][a2];
                    worst = worst.max((fd - analytic).abs() / analytic.abs().max(1.0));
                }
            }
        }
    }
    Ok(worst)
}

/// Maximum scaled relative error of sigma against central finite
/// differences of the tail objective in ambient coordinates.
pub fn sigma_check(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    mu0: &Pmf,
) -> Result<f64> {
    let trace = forward_marginals(model, policy, mu0)?;
    let sigmas = backward_sigma(model, policy, &trace)?;
    let n = model.state_count();
    let n_actions = model.action_count();
    let horizon = model.horizon();
    // Tail objective from epoch t as an algebraic function of the state
    // vector (no normalization).
    let tail = |mu_t: &[f64], t0: usize| -> f64 {
        let mut mu = mu_t.to_vec();
        let mut total = 0.0;
        let mut row = vec![0.0; n];
        for t in t0..horizon {
            let mut next = vec![0.0; n];
            for s in 0..n {
                if mu[s] == 0.0 {
                    continue;
                }
                for a in 0..n_actions {
                    let w = mu[s] * policy.prob(t, s, a);
                    if w == 0.0 {
                        continue;
                    }
                    total += w * model.reward(t, &mu, s, a);
                    model.kernel(t, &mu, s, a, &mut row);
                    for (nx, &p) in next.iter_mut().zip(row.iter()) {
                        *nx += w * p;
                    }
                }
            }
            mu = next;
        }
        for s in 0..n {
            if mu[s] != 0.0 {
                total += mu[s] * model.terminal_reward(&mu, s);
            }
        }
        total
    };
    let mut worst: f64 = 0.0;
    for t in 0..=horizon {
        for s in 0..n {
            let mut up = trace.mu[t].as_slice().to_vec();
            let mut down = up.clone();
            up[s] += FD_STEP;
            down[s] -= FD_STEP;
            let fd = (tail(&up, t) - tail(&down, t)) / (2.0 * FD_STEP);
            let analytic = sigmas.sigma[t][s];
            worst = worst.max((fd - analytic).abs() / analytic.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn small_pricing_model(horizon: usize) -> PricingModel {
    let prices = default_prices();
    let service = Pmf::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
    let shape: Vec<f64> = (0..horizon)
        .map(|t| if t < horizon / 2 { 1.5 } else { 0.5 })
        .collect();
    let lambda = build_arrival_table(&shape, 5.0, 2, 2.0, &prices).unwrap();
    PricingModel::new(PricingSpec {
        n: 2,
        b: 2,
        horizon,
        prices,
        service,
        lambda,
        c_w: 0.1,
        c_t: 1.0,
        penalty: PenaltySpec {
            c: 40.0,
            k: 1.0,
            alpha: 0.02,
            zhat: 2,
        },
        size_table: None,
    })
    .unwrap()
}

/// Runs the full verification suite: `trials` random nonlinear instances
/// for the gradient and sigma checks, Fisher structure on tiny instances,
/// and the pricing-model checks.
pub fn run_suite(trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        trials,
        max_gradient_error: 0.0,
        max_sigma_error: 0.0,
        max_fisher_asymmetry: 0.0,
        min_fisher_eigenvalue: f64::INFINITY,
        max_markov_offdiag: 0.0,
        max_kernel_row_drift: 0.0,
        max_equivalence_error: 0.0,
        max_xi_gradient_error: 0.0,
        failures: Vec::new(),
    };

    // Gradient and sigma finite differences on random nonlinear instances.
    for trial in 0..trials {
        let horizon = rng.gen_range(2..=5);
        let states = rng.gen_range(2..=4);
        let actions = rng.gen_range(2..=3);
        let model = SyntheticModel::random(
            SynthSpec::nonlinear(horizon, states, actions),
            seed ^ (trial as u64) << 8,
        );
        let experts = rng.gen_range(1..=states);
        let assignment: Vec<usize> = (0..states).map(|s| s % experts).collect();
        let policy = random_interior_policy(&mut rng, horizon, experts, actions, assignment);
        let mu0 = random_pmf(&mut rng, states);
        report.max_gradient_error = report
            .max_gradient_error
            .max(gradient_check(&model, &policy, &mu0)?);
        if trial % 4 == 0 {
            report.max_sigma_error = report
                .max_sigma_error
                .max(sigma_check(&model, &policy, &mu0)?);
        }
    }
    if report.max_gradient_error > GRADIENT_TOL {
        report.failures.push(format!(
            "policy gradient vs finite differences: max relative error {:.3e} > {GRADIENT_TOL:.0e}",
            report.max_gradient_error
        ));
    }
    if report.max_sigma_error > SIGMA_TOL {
        report.failures.push(format!(
            "sigma vs finite differences: max relative error {:.3e} > {SIGMA_TOL:.0e}",
            report.max_sigma_error
        ));
    }

    // Fisher structure: symmetry, PSD, Markov block-diagonality.
    for trial in 0..trials.min(20) {
        let nonlinear = trial % 2 == 0;
        let spec = if nonlinear {
            SynthSpec::nonlinear(3, 2, 2)
        } else {
            SynthSpec::markov(3, 2, 2)
        };
        let model = SyntheticModel::random(spec, seed ^ 0xF15E ^ trial as u64);
        let policy = random_interior_policy(&mut rng, 3, 2, 2, vec![0, 1]);
        let mu0 = random_pmf(&mut rng, 2);
        let trace = forward_marginals(&model, &policy, &mu0)?;
        let blocks = fisher_blocks(&model, &policy, &trace)?;
        let full = blocks.assemble();
        report.max_fisher_asymmetry = report
            .max_fisher_asymmetry
            .max((&full - full.transpose()).abs().max());
        let min_eig = full
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        report.min_fisher_eigenvalue = report.min_fisher_eigenvalue.min(min_eig);
        if !nonlinear {
            for t1 in 0..3 {
                for t2 in (t1 + 1)..3 {
                    report.max_markov_offdiag = report
                        .max_markov_offdiag
                        .max(blocks.block(t1, t2).abs().max());
                }
            }
        }
    }
    if report.max_fisher_asymmetry > 1e-12 {
        report
            .failures
            .push(format!("Fisher asymmetry {:.3e}", report.max_fisher_asymmetry));
    }
    if report.min_fisher_eigenvalue < -FISHER_PSD_TOL {
        report.failures.push(format!(
            "Fisher not positive semidefinite: min eigenvalue {:.3e}",
            report.min_fisher_eigenvalue
        ));
    }
    if report.max_markov_offdiag > 1e-14 {
        report.failures.push(format!(
            "nonzero off-diagonal Fisher blocks in the Markov case: {:.3e}",
            report.max_markov_offdiag
        ));
    }

    // Pricing kernel stochasticity over randomized evaluations.
    let pricing = small_pricing_model(6);
    let mut row = vec![0.0; pricing.space.len()];
    for _ in 0..1000 {
        let mu = random_pmf(&mut rng, pricing.space.len());
        let s = rng.gen_range(0..pricing.space.len());
        let a = rng.gen_range(0..pricing.spec.action_count());
        let t = rng.gen_range(0..pricing.spec.horizon);
        pricing.kernel(t, mu.as_slice(), s, a, &mut row);
        let drift = (row.iter().sum::<f64>() - 1.0).abs();
        report.max_kernel_row_drift = report.max_kernel_row_drift.max(drift);
    }
    if report.max_kernel_row_drift > KERNEL_ROW_TOL {
        report.failures.push(format!(
            "pricing kernel row drift {:.3e} > {KERNEL_ROW_TOL:.0e}",
            report.max_kernel_row_drift
        ));
    }

    // Analytic xi-gradient against tangent finite differences.
    let labels = pricing.space.labels;
    let mut grad = vec![0.0; labels];
    for _ in 0..40 {
        let z = rng.gen_range(1..pricing.space.counters);
        let a = rng.gen_range(0..pricing.spec.action_count());
        let t = rng.gen_range(0..pricing.spec.horizon);
        let xi = random_pmf(&mut rng, labels).into_vec();
        let weights: Vec<f64> = (0..pricing.space.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        kernel_xi_grad_dot(&pricing, t, &xi, z, a, &weights, &mut grad);
        let eval = |xi_pert: &[f64]| -> f64 {
            let mut k = vec![0.0; pricing.space.len()];
            kernel_conditional(&pricing, t, xi_pert, z, a, &mut k);
            k.iter().zip(weights.iter()).map(|(p, w)| p * w).sum()
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
                let analytic = grad[l1] - grad[l2];
                report.max_xi_gradient_error = report
                    .max_xi_gradient_error
                    .max((fd - analytic).abs() / analytic.abs().max(1.0));
            }
        }
    }
    if report.max_xi_gradient_error > XI_GRADIENT_TOL {
        report.failures.push(format!(
            "xi-gradient vs finite differences: {:.3e} > {XI_GRADIENT_TOL:.0e}",
            report.max_xi_gradient_error
        ));
    }

    // Naive/sum-product equivalence on the small pricing instance.
    let policy = random_interior_policy(
        &mut rng,
        pricing.spec.horizon,
        pricing.space.counters,
        pricing.spec.action_count(),
        pricing.count_assignment(),
    );
    let mu0 = random_pmf(&mut rng, pricing.space.len());
    report.max_equivalence_error = equivalence_check(&pricing, &policy, &mu0)?;
    if report.max_equivalence_error > EQUIVALENCE_TOL {
        report.failures.push(format!(
            "sum-product vs generic backward: {:.3e} > {EQUIVALENCE_TOL:.0e}",
            report.max_equivalence_error
        ));
    }

    Ok(report)
}

/// Largest elementwise gap between the sum-product and the generic
/// recursions (marginals, sigma, Qbar) on one instance.
pub fn equivalence_check(
    model: &PricingModel,
    policy: &PartitionedPolicy,
    mu0: &Pmf,
) -> Result<f64> {
    let trace = forward_marginals(model, policy, mu0)?;
    let sigmas = backward_sigma(model, policy, &trace)?;
    let table = qbar(model, policy, &trace, &sigmas);
    let engine = QplexEngine::with_start(model, mu0.clone());
    let episode = engine.episode(policy)?;
    let mut worst: f64 = 0.0;
    for t in 0..=model.spec.horizon {
        for s in 0..model.space.len() {
            worst = worst.max((episode.trace.mu[t].get(s) - trace.mu[t].get(s)).abs());
            worst = worst.max((episode.sigmas.sigma[t][s] - sigmas.sigma[t][s]).abs());
        }
    }
    for t in 0..model.spec.horizon {
        for z in 0..model.space.counters {
            for a in 0..model.spec.action_count() {
                worst = worst.max((episode.qbar.qbar[t][z][a] - table.qbar[t][z][a]).abs());
            }
        }
    }
    Ok(worst)
}

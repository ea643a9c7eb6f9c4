#![allow(dead_code)]

//! Shared helpers for the engine test suites: independent oracles
//! (Bellman recursions, tail objectives, matrix iteration) implemented
//! directly from the defining formulas, without reusing the library's
//! iterative schemes.

use qdp::model::NonlinearModel;
use qdp::pmf::Pmf;
use qdp::policy::PartitionedPolicy;
use rand::Rng;

/// Random interior policy over a given partition.
pub fn random_policy<R: Rng>(
    rng: &mut R,
    horizon: usize,
    expert_count: usize,
    actions: usize,
    assignment: Vec<usize>,
) -> PartitionedPolicy {
    let theta = (0..horizon)
        .map(|_| {
            (0..expert_count)
                .map(|_| {
                    let w: Vec<f64> = (0..actions).map(|_| rng.gen_range(0.05..1.0)).collect();
                    Pmf::normalized(w).unwrap()
                })
                .collect()
        })
        .collect();
    PartitionedPolicy::new(assignment, expert_count, actions, theta, None).unwrap()
}

pub fn random_pmf<R: Rng>(rng: &mut R, len: usize) -> Pmf {
    let w: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    Pmf::normalized(w).unwrap()
}

/// Tail objective `J^(t)(mu)`: expected reward accumulated from time `t`
/// onward when the time-`t` state vector is `mu`, evaluated as an algebraic
/// function of an arbitrary (possibly off-simplex) vector. This is the
/// quantity whose gradient the backward sigma recursion computes.
pub fn tail_objective(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    mu_t: &[f64],
    t0: usize,
) -> f64 {
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
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
}

/// Objective as a function of the policy (forward evaluation from `mu0`).
pub fn objective(model: &dyn NonlinearModel, policy: &PartitionedPolicy, mu0: &Pmf) -> f64 {
    tail_objective(model, policy, mu0.as_slice(), 0)
}

/// Bellman state/action value recursion for Markov (mu-independent) models,
/// evaluated at the marginals so the kernels can be called uniformly.
pub struct BellmanValues {
    /// `v[t][s]`
    pub v: Vec<Vec<f64>>,
    /// `q[t][s][a]`
    pub q: Vec<Vec<Vec<f64>>>,
}

pub fn bellman_policy_values(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    mu_for_eval: &[Pmf],
) -> BellmanValues {
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
    let mut v = vec![vec![0.0; n]; horizon + 1];
    let mut q = vec![vec![vec![0.0; n_actions]; n]; horizon];
    for s in 0..n {
        v[horizon][s] = model.terminal_reward(mu_for_eval[horizon].as_slice(), s);
    }
    let mut row = vec![0.0; n];
    for t in (0..horizon).rev() {
        let mu = mu_for_eval[t].as_slice();
        for s in 0..n {
            let mut vs = 0.0;
            for a in 0..n_actions {
                model.kernel(t, mu, s, a, &mut row);
                let cont: f64 = row.iter().zip(v[t + 1].iter()).map(|(p, vv)| p * vv).sum();
                q[t][s][a] = model.reward(t, mu, s, a) + cont;
                vs += policy.prob(t, s, a) * q[t][s][a];
            }
            v[t][s] = vs;
        }
    }
    BellmanValues { v, q }
}

/// Optimal Bellman value for a Markov model (max over actions).
pub fn bellman_optimal_value(model: &dyn NonlinearModel, mu_dummy: &[f64]) -> Vec<Vec<f64>> {
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
    let mut v = vec![vec![0.0; n]; horizon + 1];
    for s in 0..n {
        v[horizon][s] = model.terminal_reward(mu_dummy, s);
    }
    let mut row = vec![0.0; n];
    for t in (0..horizon).rev() {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_actions {
                model.kernel(t, mu_dummy, s, a, &mut row);
                let cont: f64 = row.iter().zip(v[t + 1].iter()).map(|(p, vv)| p * vv).sum();
                best = best.max(model.reward(t, mu_dummy, s, a) + cont);
            }
            v[t][s] = best;
        }
    }
    v
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

use nalgebra::{DMatrix, DVector};
use qdp::enumerate::enumerate_trajectories;

/// Enumeration-based Fisher oracle: E[∇log q (∇log q)ᵀ] with per-trajectory
/// scores assembled from the chain rule, evaluated over all trajectories.
pub fn fisher_by_enumeration(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    mu0: &Pmf,
) -> nalgebra::DMatrix<f64> {
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
    let experts = policy.expert_count();
    let dim = experts * n_actions;
    let enumeration = enumerate_trajectories(model, policy, mu0).unwrap();
    let trace = &enumeration.trace;

    // Jacobians required by the chain rule, from their definitions.
    let mut kernel = vec![vec![vec![vec![0.0; n]; n_actions]; n]; horizon];
    for t in 0..horizon {
        let mu = trace.mu[t].as_slice();
        for s in 0..n {
            for a in 0..n_actions {
                model.kernel(t, mu, s, a, &mut kernel[t][s][a]);
            }
        }
    }
    // a_mats[t][(z,a)][s'] = ∂mu^(t+1)(s')/∂γ^(t)_{z,a}
    let mut a_mats = Vec::new();
    let mut d_mats = Vec::new();
    for t in 0..horizon {
        let mu = trace.mu[t].as_slice();
        let mut a_mat: DMatrix<f64> = DMatrix::zeros(dim, n);
        for s in 0..n {
            if mu[s] == 0.0 {
                continue;
            }
            let z = policy.expert_of(s);
            for a_idx in 0..n_actions {
                for atil in 0..n_actions {
                    // ∂π(ã|s)/∂γ_{z,a} = π(ã|s) (1(ã=a) − π(a|s))
                    let dpi = policy.prob(t, s, atil)
                        * (if atil == a_idx { 1.0 } else { 0.0 } - policy.prob(t, s, a_idx));
                    if dpi == 0.0 {
                        continue;
                    }
                    for s_next in 0..n {
                        a_mat[(z * n_actions + a_idx, s_next)] +=
                            mu[s] * dpi * kernel[t][s][atil][s_next];
                    }
                }
            }
        }
        a_mats.push(a_mat);
        let mut d: DMatrix<f64> = DMatrix::zeros(n, n);
        for sp in 0..n {
            for a in 0..n_actions {
                let pa = policy.prob(t, sp, a);
                for s_next in 0..n {
                    d[(sp, s_next)] += pa * kernel[t][sp][a][s_next];
                }
            }
            for s_tilde in 0..n {
                if mu[s_tilde] == 0.0 {
                    continue;
                }
                for a in 0..n_actions {
                    let w = mu[s_tilde] * policy.prob(t, s_tilde, a);
                    for s_next in 0..n {
                        d[(sp, s_next)] +=
                            w * model.kernel_mu_partial(t, mu, s_tilde, a, s_next, sp);
                    }
                }
            }
        }
        d_mats.push(d);
    }
    // grad_mu[t][tau] = ∂mu^(tau)/∂γ^(t), for tau > t.
    let mut grad_mu: Vec<Vec<DMatrix<f64>>> = vec![vec![DMatrix::zeros(0, 0); horizon + 1]; horizon];
    for t in 0..horizon {
        grad_mu[t][t + 1] = a_mats[t].clone();
        for tau in (t + 2)..=horizon {
            grad_mu[t][tau] = &grad_mu[t][tau - 1] * &d_mats[tau - 1];
        }
    }

    let mut fisher: DMatrix<f64> = DMatrix::zeros(horizon * dim, horizon * dim);
    for traj in &enumeration.trajectories {
        if traj.prob == 0.0 {
            continue;
        }
        let mut score: DVector<f64> = DVector::zeros(horizon * dim);
        for t in 0..horizon {
            let (s, a) = (traj.states[t], traj.actions[t]);
            let z = policy.expert_of(s);
            // ∇_{γ^(t)} log π^(t)(a|s): e_a − θ_z on the z block.
            for atil in 0..n_actions {
                let v = if atil == a { 1.0 } else { 0.0 } - policy.prob(t, s, atil);
                score[t * dim + z * n_actions + atil] += v;
            }
            // Σ_{tau > t} ∂mu^(tau)/∂γ^(t) · ∇_mu log p^(tau)(s_{tau+1}|s_tau,a_tau)
            for tau in (t + 1)..horizon {
                let mu_tau = trace.mu[tau].as_slice();
                let (st, at, snx) = (traj.states[tau], traj.actions[tau], traj.states[tau + 1]);
                let p = kernel[tau][st][at][snx];
                for sp in 0..n {
                    let dlogp = model.kernel_mu_partial(tau, mu_tau, st, at, snx, sp) / p;
                    if dlogp == 0.0 {
                        continue;
                    }
                    for i in 0..dim {
                        score[t * dim + i] += grad_mu[t][tau][(i, sp)] * dlogp;
                    }
                }
            }
        }
        fisher += traj.prob * &score * score.transpose();
    }
    fisher
}


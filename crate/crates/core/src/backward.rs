//! Backward iterative scheme: the sigma recursion and the policy gradient.
//!
//! `sigma^(t)` is the gradient of the tail objective with respect to the
//! time-`t` state distribution. Unlike a Bellman value recursion it carries
//! extra terms from the dependence of kernels and rewards on the state
//! distribution; in the Markov special case it reduces to the state value
//! function.

use crate::error::{Error, Result};
use crate::forward::MarginalsTrace;
use crate::model::NonlinearModel;
use crate::policy::PartitionedPolicy;

/// The vectors `sigma^(0..T)` produced by the backward scheme (reward units).
#[derive(Debug, Clone)]
pub struct SigmaTrace {
    pub sigma: Vec<Vec<f64>>,
}

/// `Q^(t)_{mu,sigma'}(s,a) = r^(t)_mu(s,a) + Σ_{s'} p^(t)_mu(s'|s,a) sigma'(s')`.
///
/// This is the ascent signal of the policy gradient theorem, not the
/// state-action value function (the two coincide only for Markov models).
pub fn q_function(
    model: &dyn NonlinearModel,
    mu: &[f64],
    sigma_next: &[f64],
    t: usize,
) -> Vec<Vec<f64>> {
    let n = model.state_count();
    let n_actions = model.action_count();
    assert_eq!(sigma_next.len(), n);
    let mut row = vec![0.0; n];
    let mut q = vec![vec![0.0; n_actions]; n];
    for (s, q_s) in q.iter_mut().enumerate() {
        for (a, q_sa) in q_s.iter_mut().enumerate() {
            model.kernel(t, mu, s, a, &mut row);
            let cont: f64 = row.iter().zip(sigma_next.iter()).map(|(p, v)| p * v).sum();
            *q_sa = model.reward(t, mu, s, a) + cont;
        }
    }
    q
}

/// Runs the backward recursion for `sigma^(T), ..., sigma^(0)`:
///
/// ```text
/// sigma^(T)(s) = r^(T)(s) + Σ_s̃ mu^(T)(s̃) ∂r^(T)(s̃)/∂mu(s)
/// sigma^(t)(s) = Σ_a π(a|s) Q^(t)(s,a)
///              + Σ_{s̃,a} mu^(t)(s̃) π(a|s̃) ∂Q^(t)(s̃,a)/∂mu(s)
/// ```
///
/// States with exactly zero mass contribute nothing to the derivative sums.
pub fn backward_sigma(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    trace: &MarginalsTrace,
) -> Result<SigmaTrace> {
    if !model.mu_partials_available() {
        return Err(Error::UnsupportedModel(
            "model does not implement mu-partial derivatives".into(),
        ));
    }
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
    let mut sigmas = vec![Vec::new(); horizon + 1];

    // Terminal layer.
    {
        let mu = trace.mu[horizon].as_slice();
        let mut sigma = vec![0.0; n];
        for (s, slot) in sigma.iter_mut().enumerate() {
            *slot = model.terminal_reward(mu, s);
        }
        for s_tilde in 0..n {
            let mass = mu[s_tilde];
            if mass == 0.0 {
                continue;
            }
            for (sp, slot) in sigma.iter_mut().enumerate() {
                *slot += mass * model.terminal_mu_partial(mu, s_tilde, sp);
            }
        }
        sigmas[horizon] = sigma;
    }

    let mut partial_buf = vec![0.0; n];
    for t in (0..horizon).rev() {
        let mu = trace.mu[t].as_slice();
        let sigma_next = &sigmas[t + 1];
        let q = q_function(model, mu, sigma_next, t);
        let mut sigma = vec![0.0; n];
        for (s, slot) in sigma.iter_mut().enumerate() {
            let mut v = 0.0;
            for a in 0..n_actions {
                v += policy.prob(t, s, a) * q[s][a];
            }
            *slot = v;
        }
        for s_tilde in 0..n {
            let mass = mu[s_tilde];
            if mass == 0.0 {
                continue;
            }
            for a in 0..n_actions {
                let weight = mass * policy.prob(t, s_tilde, a);
                if weight == 0.0 {
                    continue;
                }
                // ∂Q(s̃,a)/∂mu(sp) = ∂r/∂mu(sp) + Σ_{s'} ∂p(s'|s̃,a)/∂mu(sp) sigma'(s')
                model.kernel_mu_partial_dot(t, mu, s_tilde, a, sigma_next, &mut partial_buf);
                for (sp, slot) in sigma.iter_mut().enumerate() {
                    *slot += weight
                        * (model.reward_mu_partial(t, mu, s_tilde, a, sp) + partial_buf[sp]);
                }
            }
        }
        for &v in &sigma {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("sigma at t={t}")));
            }
        }
        sigmas[t] = sigma;
    }
    Ok(SigmaTrace { sigma: sigmas })
}

/// Policy gradient blocks for a state-partitioned tabular policy:
/// `grad[t][z][a] = mu^(t)(S_z) × Qbar^(t)_z(a)`.
///
/// Blocks for unreachable `(t, z)` pairs are exactly zero.
pub fn policy_gradient(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    trace: &MarginalsTrace,
    sigmas: &SigmaTrace,
) -> Vec<Vec<Vec<f64>>> {
    let qbar = crate::policy::qbar(model, policy, trace, sigmas);
    let mut grad = qbar.qbar.clone();
    for (t, grad_t) in grad.iter_mut().enumerate() {
        for (z, block) in grad_t.iter_mut().enumerate() {
            let reach = qbar.reach[t][z];
            for g in block.iter_mut() {
                *g *= reach;
            }
        }
    }
    grad
}

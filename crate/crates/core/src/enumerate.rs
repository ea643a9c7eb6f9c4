//! Exhaustive trajectory enumeration. Exponential in the horizon, guarded,
//! and meant as a test oracle for the iterative schemes.

use crate::error::{Error, Result};
use crate::forward::{forward_marginals, MarginalsTrace};
use crate::model::NonlinearModel;
use crate::pmf::Pmf;
use crate::policy::PartitionedPolicy;

/// Refuse enumerations beyond this many trajectories.
pub const TRAJECTORY_GUARD: u128 = 10_000_000;

/// One trajectory `(s_0, a_0, ..., a_{T-1}, s_T)` with its probability.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub prob: f64,
}

/// The full trajectory pmf together with the marginals trace used to
/// evaluate the distribution-dependent kernels.
#[derive(Debug)]
pub struct TrajectoryPmf {
    pub trajectories: Vec<Trajectory>,
    pub trace: MarginalsTrace,
}

impl TrajectoryPmf {
    /// Time-`t` state marginal of the enumerated pmf.
    pub fn state_marginal(&self, t: usize, state_count: usize) -> Vec<f64> {
        let mut out = vec![0.0; state_count];
        for traj in &self.trajectories {
            out[traj.states[t]] += traj.prob;
        }
        out
    }

    /// Expectation of the summed rewards under the enumerated pmf, with
    /// rewards evaluated at the forward marginals.
    pub fn expected_total_reward(&self, model: &dyn NonlinearModel) -> f64 {
        let horizon = model.horizon();
        let mut total = 0.0;
        for traj in &self.trajectories {
            if traj.prob == 0.0 {
                continue;
            }
            let mut sum = 0.0;
            for t in 0..horizon {
                sum += model.reward(t, self.trace.mu[t].as_slice(), traj.states[t], traj.actions[t]);
            }
            sum += model.terminal_reward(self.trace.mu[horizon].as_slice(), traj.states[horizon]);
            total += traj.prob * sum;
        }
        total
    }

    pub fn total_probability(&self) -> f64 {
        self.trajectories.iter().map(|t| t.prob).sum()
    }
}

/// Enumerates the pmf of `(S_0, A_0, ..., S_T)`: probabilities multiply the
/// initial distribution, the policy, and the kernels evaluated at the
/// forward marginals. Zero-probability branches are pruned; the guard bounds
/// the worst-case count `|S|^(T+1) |A|^T`.
pub fn enumerate_trajectories(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    mu0: &Pmf,
) -> Result<TrajectoryPmf> {
    let horizon = model.horizon();
    let n = model.state_count() as u128;
    let n_actions = model.action_count() as u128;
    let mut bound: u128 = n;
    for _ in 0..horizon {
        bound = bound
            .checked_mul(n_actions)
            .and_then(|b| b.checked_mul(n))
            .unwrap_or(u128::MAX);
        if bound > TRAJECTORY_GUARD {
            return Err(Error::Guard {
                what: "trajectory enumeration".into(),
                size: bound,
                limit: TRAJECTORY_GUARD,
            });
        }
    }

    let trace = forward_marginals(model, policy, mu0)?;
    // Kernel tables per (t, s, a), evaluated once at the forward marginals.
    let n = model.state_count();
    let n_actions = model.action_count();
    let mut kernels = vec![vec![vec![vec![0.0; n]; n_actions]; n]; horizon];
    for (t, kernels_t) in kernels.iter_mut().enumerate() {
        let mu = trace.mu[t].as_slice();
        for (s, rows) in kernels_t.iter_mut().enumerate() {
            for (a, row) in rows.iter_mut().enumerate() {
                model.kernel(t, mu, s, a, row);
            }
        }
    }

    let mut trajectories = Vec::new();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    for s0 in 0..n {
        let p0 = mu0.get(s0);
        if p0 == 0.0 {
            continue;
        }
        states.push(s0);
        extend(
            policy,
            &kernels,
            horizon,
            n,
            n_actions,
            p0,
            &mut states,
            &mut actions,
            &mut trajectories,
        );
        states.pop();
    }
    Ok(TrajectoryPmf {
        trajectories,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn extend(
    policy: &PartitionedPolicy,
    kernels: &[Vec<Vec<Vec<f64>>>],
    horizon: usize,
    n: usize,
    n_actions: usize,
    prob: f64,
    states: &mut Vec<usize>,
    actions: &mut Vec<usize>,
    out: &mut Vec<Trajectory>,
) {
    let t = actions.len();
    if t == horizon {
        out.push(Trajectory {
            states: states.clone(),
            actions: actions.clone(),
            prob,
        });
        return;
    }
    let s = *states.last().unwrap();
    for a in 0..n_actions {
        let pa = policy.prob(t, s, a);
        if pa == 0.0 {
            continue;
        }
        actions.push(a);
        for s_next in 0..n {
            let p = kernels[t][s][a][s_next];
            if p == 0.0 {
                continue;
            }
            states.push(s_next);
            extend(
                policy,
                kernels,
                horizon,
                n,
                n_actions,
                prob * pa * p,
                states,
                actions,
                out,
            );
            states.pop();
        }
        actions.pop();
    }
}

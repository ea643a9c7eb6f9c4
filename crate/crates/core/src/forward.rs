//! Forward iterative scheme: state marginals and the expected total reward.

use crate::error::{Error, Result};
use crate::model::NonlinearModel;
use crate::pmf::{Pmf, PMF_NEG_CLAMP};
use crate::policy::PartitionedPolicy;

/// The sequence of state marginals `mu^(0..T)` produced by the forward scheme.
#[derive(Debug, Clone)]
pub struct MarginalsTrace {
    pub mu: Vec<Pmf>,
}

impl MarginalsTrace {
    pub fn horizon(&self) -> usize {
        self.mu.len() - 1
    }
}

/// Expected total reward split into per-period terms and named components.
///
/// `total = Σ_t per_period[t] + terminal` and the named components sum to
/// `total` as well, so harness reporting never needs a recomputation.
#[derive(Debug, Clone)]
pub struct RewardDecomposition {
    pub per_period: Vec<f64>,
    pub terminal: f64,
    pub components: Vec<(String, f64)>,
    pub total: f64,
}

impl RewardDecomposition {
    pub fn component(&self, name: &str) -> f64 {
        self.components
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    }
}

fn check_kernel_row(row: &[f64], t: usize, s: usize, a: usize) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < PMF_NEG_CLAMP {
            return Err(Error::ModelContract(format!(
                "kernel row (t={t}, s={s}, a={a}) has entry {p}"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::ModelContract(format!(
            "kernel row (t={t}, s={s}, a={a}) sums to {sum}"
        )));
    }
    Ok(())
}

/// Runs the forward recursion
/// `mu^(t+1)(s') = Σ_{s,a} mu^(t)(s) π^(t)(a|s) p^(t)_{mu^(t)}(s'|s,a)`.
///
/// Every kernel row reached with positive mass is checked to be a pmf; a
/// violation aborts with a model-contract error.
pub fn forward_marginals(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    mu0: &Pmf,
) -> Result<MarginalsTrace> {
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
    assert_eq!(mu0.len(), n, "initial distribution dimension mismatch");
    assert_eq!(policy.horizon(), horizon, "policy horizon mismatch");

    let mut trace = Vec::with_capacity(horizon + 1);
    trace.push(mu0.clone());
    let mut row = vec![0.0; n];
    for t in 0..horizon {
        let mu = trace[t].as_slice();
        let mut next = vec![0.0; n];
        for s in 0..n {
            let mass = mu[s];
            if mass == 0.0 {
                continue;
            }
            for a in 0..n_actions {
                let weight = mass * policy.prob(t, s, a);
                if weight == 0.0 {
                    continue;
                }
                model.kernel(t, mu, s, a, &mut row);
                check_kernel_row(&row, t, s, a)?;
                for (nxt, &p) in next.iter_mut().zip(row.iter()) {
                    *nxt += weight * p;
                }
            }
        }
        trace.push(Pmf::new(next).map_err(|e| {
            Error::ModelContract(format!("forward marginal at t={} invalid: {e}", t + 1))
        })?);
    }
    Ok(MarginalsTrace { mu: trace })
}

/// Expected total reward
/// `J = Σ_t Σ_{s,a} mu^(t)(s) π^(t)(a|s) r^(t)(s,a) + Σ_s mu^(T)(s) r^(T)(s)`
/// with the per-period and per-component breakdown.
pub fn expected_total_reward(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    trace: &MarginalsTrace,
) -> RewardDecomposition {
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
    let names = model.component_names();
    let mut components = vec![0.0; names.len()];
    let mut buf = vec![0.0; names.len()];
    let mut per_period = Vec::with_capacity(horizon);

    for t in 0..horizon {
        let mu = trace.mu[t].as_slice();
        let mut period = 0.0;
        for s in 0..n {
            let mass = mu[s];
            if mass == 0.0 {
                continue;
            }
            for a in 0..n_actions {
                let weight = mass * policy.prob(t, s, a);
                if weight == 0.0 {
                    continue;
                }
                model.reward_components(t, mu, s, a, &mut buf);
                for (acc, &v) in components.iter_mut().zip(buf.iter()) {
                    *acc += weight * v;
                }
                period += weight * buf.iter().sum::<f64>();
            }
        }
        per_period.push(period);
    }

    let mu_t = trace.mu[horizon].as_slice();
    let mut terminal = 0.0;
    for s in 0..n {
        let mass = mu_t[s];
        if mass == 0.0 {
            continue;
        }
        model.terminal_components(mu_t, s, &mut buf);
        for (acc, &v) in components.iter_mut().zip(buf.iter()) {
            *acc += mass * v;
        }
        terminal += mass * buf.iter().sum::<f64>();
    }

    let total = per_period.iter().sum::<f64>() + terminal;
    RewardDecomposition {
        per_period,
        terminal,
        components: names.into_iter().zip(components).collect(),
        total,
    }
}

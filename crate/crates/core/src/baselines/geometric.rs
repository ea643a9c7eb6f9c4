//! Exact count-state solver for memoryless service durations.
//!
//! With geometric service times the residual-duration information is
//! worthless and the customer count is a sufficient state, so Bellman
//! recursions over `z` alone are exact. The service pmf is a truncated
//! geometric: the right tail is cut at total mass 1e-6 and the success
//! parameter re-fit by bisection so the truncated mean matches the target.

use crate::error::{Error, Result};
use crate::pmf::Pmf;
use crate::policy::PurePolicy;
use crate::pricing::kernel::binomial_pmf;
use crate::pricing::PricingModel;

pub const TAIL_TOLERANCE: f64 = 1e-6;

/// Mean of the geometric on `{1..len}` truncated-and-renormalized with
/// success probability `p`.
fn truncated_mean(p: f64, len: usize) -> f64 {
    let q = 1.0 - p;
    let mut weight_sum = 0.0;
    let mut mean = 0.0;
    let mut w = p;
    for l in 1..=len {
        weight_sum += w;
        mean += l as f64 * w;
        w *= q;
    }
    mean / weight_sum
}

fn support_length(p: f64) -> usize {
    // Smallest L with (1-p)^L <= TAIL_TOLERANCE.
    ((TAIL_TOLERANCE.ln() / (1.0 - p).ln()).ceil() as usize).max(1)
}

/// Fits a truncated geometric service pmf whose (truncated) mean equals the
/// target, by bisection on the success parameter.
pub fn fit_truncated_geometric(target_mean: f64) -> Result<Pmf> {
    if target_mean < 1.0 {
        return Err(Error::Domain(
            "service durations are at least one period".into(),
        ));
    }
    let mean_at = |p: f64| truncated_mean(p, support_length(p));
    let mut lo = 1e-9;
    let mut hi = 1.0 - 1e-12;
    // mean_at is decreasing in p: mean_at(hi) = 1, mean_at(lo) huge.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) > target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    let len = support_length(p);
    let q = 1.0 - p;
    let mut weights = Vec::with_capacity(len);
    let mut w = p;
    for _ in 0..len {
        weights.push(w);
        w *= q;
    }
    Pmf::normalized(weights)
}

/// The count-only MDP induced by treating the service pmf as memoryless:
/// each in-service customer completes with probability `g(1)` per period.
pub struct CountMdp<'a> {
    model: &'a PricingModel,
    completion: f64,
}

pub struct CountSolution {
    pub value: f64,
    pub policy: PurePolicy,
}

impl<'a> CountMdp<'a> {
    pub fn new(model: &'a PricingModel) -> Self {
        CountMdp {
            model,
            completion: model.spec.service.get(0),
        }
    }

    pub fn completion_probability(&self) -> f64 {
        self.completion
    }

    fn q_row(&self, t: usize, z: usize, v_next: &[f64]) -> Vec<f64> {
        let spec = &self.model.spec;
        let counters = self.model.space.counters;
        let cap = spec.n + spec.b;
        let x = z.min(spec.n);
        let wait = -spec.c_w * z.saturating_sub(spec.n) as f64;
        (0..spec.action_count())
            .map(|a| {
                let pois = self.model.poisson(t, a);
                let mut value = wait;
                for d in 0..=x {
                    let qd = binomial_pmf(x, self.completion, d);
                    if qd == 0.0 {
                        continue;
                    }
                    value += qd * spec.prices[a] * pois.emin[cap + d - z];
                    for z_next in (z - d)..counters {
                        let route = if z_next < cap {
                            pois.pmf[z_next + d - z]
                        } else {
                            pois.survival[cap + d - z]
                        };
                        if route != 0.0 {
                            value += qd * route * v_next[z_next];
                        }
                    }
                }
                value
            })
            .collect()
    }

    fn terminal(&self) -> Vec<f64> {
        (0..self.model.space.counters)
            .map(|z| -self.model.spec.c_t * z as f64)
            .collect()
    }

    /// Optimal count policy and its value from the empty start.
    pub fn bellman_optimal(&self) -> CountSolution {
        let horizon = self.model.spec.horizon;
        let counters = self.model.space.counters;
        let mut v = self.terminal();
        let mut actions = vec![vec![0usize; counters]; horizon];
        for t in (0..horizon).rev() {
            let mut v_new = vec![0.0; counters];
            for z in 0..counters {
                let row = self.q_row(t, z, &v);
                let mut best = 0usize;
                for (a, &q) in row.iter().enumerate().skip(1) {
                    if q > row[best] {
                        best = a;
                    }
                }
                actions[t][z] = best;
                v_new[z] = row[best];
            }
            v = v_new;
        }
        CountSolution {
            value: v[0],
            policy: PurePolicy { actions },
        }
    }

    /// Exact value of a count policy under the memoryless dynamics.
    pub fn evaluate(&self, policy: &PurePolicy) -> Result<f64> {
        if policy.horizon() != self.model.spec.horizon
            || policy.expert_count() != self.model.space.counters
        {
            return Err(Error::Domain(
                "count policy dimensions do not match the instance".into(),
            ));
        }
        let horizon = self.model.spec.horizon;
        let counters = self.model.space.counters;
        let mut v = self.terminal();
        for t in (0..horizon).rev() {
            let mut v_new = vec![0.0; counters];
            for z in 0..counters {
                let row = self.q_row(t, z, &v);
                v_new[z] = row[policy.action(t, z)];
            }
            v = v_new;
        }
        Ok(v[0])
    }
}

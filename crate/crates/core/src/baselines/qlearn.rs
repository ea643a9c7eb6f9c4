//! State-aggregated tabular Q-learning baseline.
//!
//! The full-information state space is far too large for a tabular method,
//! so all states `(t, z, h)` sharing a counter are merged into the index
//! `(t, z)`. The aggregation introduces state aliasing (merged states differ
//! in their dynamics), which is exactly the handicap this baseline
//! quantifies. Exploration is pure (`epsilon = 1`): actions are sampled
//! uniformly and the temporal-difference target uses the greedy next value.

use rayon::prelude::*;

use crate::error::Result;
use crate::policy::PurePolicy;
use crate::pricing::PricingModel;
use crate::rng::{derive_seed, StreamRng};
use crate::sim::{self, simulate_policy, PhysicalState};

#[derive(Debug, Clone)]
pub struct QLearnPoint {
    pub episode: u64,
    pub value: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone)]
pub struct QLearnCurve {
    pub rate: f64,
    pub points: Vec<QLearnPoint>,
    pub final_policy: PurePolicy,
    /// Best checkpoint value and its policy.
    pub best_value: f64,
    pub best_policy: PurePolicy,
}

#[derive(Debug)]
pub struct QLearnResult {
    pub curves: Vec<QLearnCurve>,
}

impl QLearnResult {
    /// Highest checkpoint value across the learning rates.
    pub fn best(&self) -> &QLearnCurve {
        self.curves
            .iter()
            .max_by(|a, b| a.best_value.partial_cmp(&b.best_value).unwrap())
            .expect("at least one rate")
    }
}

fn greedy_policy(q: &[Vec<Vec<f64>>]) -> PurePolicy {
    let actions = q
        .iter()
        .map(|q_t| {
            q_t.iter()
                .map(|row| {
                    let mut best = 0usize;
                    for (a, &v) in row.iter().enumerate().skip(1) {
                        if v > row[best] {
                            best = a;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    PurePolicy { actions }
}

/// Runs Q-learning at each constant learning rate, evaluating the greedy
/// count policy by Monte Carlo every `eval_every` episodes on a separate
/// seed stream. Everything is deterministic in `seed`.
pub fn qlearn_aggregated(
    model: &PricingModel,
    rates: &[f64],
    episodes: u64,
    eval_every: u64,
    eval_reps: u64,
    seed: u64,
) -> Result<QLearnResult> {
    let curves: Vec<QLearnCurve> = rates
        .par_iter()
        .enumerate()
        .map(|(rate_idx, &rate)| run_rate(model, rate, rate_idx, episodes, eval_every, eval_reps, seed))
        .collect::<Result<_>>()?;
    Ok(QLearnResult { curves })
}

fn run_rate(
    model: &PricingModel,
    rate: f64,
    rate_idx: usize,
    episodes: u64,
    eval_every: u64,
    eval_reps: u64,
    seed: u64,
) -> Result<QLearnCurve> {
    let spec = &model.spec;
    let horizon = spec.horizon;
    let counters = model.space.counters;
    let n_actions = spec.action_count();
    let labels = model.space.labels;
    let cdf = sim::service_cdf(model);
    let train_seed = derive_seed(seed, 0x71_0000 + rate_idx as u64);
    let eval_seed = derive_seed(seed, 0xE7A1_0000 + rate_idx as u64);

    let mut q = vec![vec![vec![0.0f64; n_actions]; counters]; horizon];
    let mut points = Vec::new();
    let mut best_value = f64::NEG_INFINITY;
    let mut best_policy = greedy_policy(&q);

    for episode in 0..episodes {
        let mut rng = StreamRng::new(train_seed, episode);
        let mut state = PhysicalState::empty(labels);
        for t in 0..horizon {
            let z = state.z;
            let a = rng.next_below(n_actions);
            let waiting = -spec.c_w * z.saturating_sub(spec.n) as f64;
            let outcome = sim::step_physical(model, &mut state, t, a, &cdf, &mut rng);
            let reward = outcome.admitted as f64 * spec.prices[a] + waiting;
            let next_value = if t + 1 < horizon {
                q[t + 1][state.z]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
            } else {
                -spec.c_t * state.z as f64
            };
            let target = reward + next_value;
            q[t][z][a] += rate * (target - q[t][z][a]);
        }

        if (episode + 1) % eval_every == 0 || episode + 1 == episodes {
            let policy = greedy_policy(&q);
            let result = simulate_policy(model, &policy, eval_reps, derive_seed(eval_seed, episode))?;
            if result.mean > best_value {
                best_value = result.mean;
                best_policy = policy.clone();
            }
            points.push(QLearnPoint {
                episode: episode + 1,
                value: result.mean,
                ci_halfwidth: result.ci_halfwidth,
            });
        }
    }

    Ok(QLearnCurve {
        rate,
        points,
        final_policy: greedy_policy(&q),
        best_value,
        best_policy,
    })
}

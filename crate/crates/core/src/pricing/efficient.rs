//! Sum-product evaluation of the pricing model's forward and backward
//! schemes.
//!
//! The kernel's chain-rule structure and the separability of the reward let
//! both recursions run per counter instead of per composite state: forward
//! and backward messages over `(z, z', type)` are computed once and shared,
//! and the label coordinate enters only through rank-one updates. The
//! derivative messages handle the binomial departures factor (which reads
//! `xi(1)` only) and the shifted old-type label tail in closed form.

use crate::error::Result;
use crate::forward::{MarginalsTrace, RewardDecomposition};
use crate::pmf::Pmf;
use crate::policy::{PartitionedPolicy, QBarTable};
use crate::train::{EpisodeData, EpisodeEngine};

use super::kernel::{binomial_pmf, binomial_pmf_deriv, type_old_prob};
use super::reward::{penalty_constant, penalty_partial, revenue, revenue_xi1_deriv, waiting_cost};
use super::PricingModel;

/// Per-counter snapshot of one time layer of the forward pass.
struct Layer {
    /// Flat normalized state distribution.
    mu: Vec<f64>,
    /// Counter marginals.
    mu_z: Vec<f64>,
    /// Label conditionals per counter (service pmf where the counter is empty).
    xi: Vec<Vec<f64>>,
}

impl Layer {
    fn from_mu(model: &PricingModel, mu: Vec<f64>) -> Self {
        let space = model.space;
        let mut mu_z = vec![0.0; space.counters];
        let mut xi = vec![vec![0.0; space.labels]; space.counters];
        for z in 0..space.counters {
            mu_z[z] = space.counter_marginal(&mu, z);
            model.xi_of(&mu, z, &mut xi[z]);
        }
        Layer { mu, mu_z, xi }
    }
}

/// Forward/derivative messages for one counter at one epoch.
struct CounterMessages {
    x: usize,
    xi1: f64,
    /// `Σ_d q(d|z) q_mix(z'|z,d) q(new|z,d,z')` per next counter.
    a_new: Vec<f64>,
    /// Same with the old type.
    a_old: Vec<f64>,
    /// Departure-derivative analogues (binomial derivative in place of the pmf).
    da_new: Vec<f64>,
    da_old: Vec<f64>,
}

fn counter_messages(
    model: &PricingModel,
    t: usize,
    theta: &Pmf,
    xi: &[f64],
    z: usize,
    with_derivatives: bool,
) -> CounterMessages {
    let space = model.space;
    let counters = space.counters;
    let cap = model.spec.n + model.spec.b;
    let x = model.spec.size_fn(z);
    let xi1 = xi[0];
    let all_complete = xi1 >= 1.0;

    // Action-mixed Poisson point masses and survivals.
    let y_len = cap + x + 2;
    let mut mix_pmf = vec![0.0; y_len];
    let mut mix_surv = vec![0.0; y_len];
    for (a, &w) in theta.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let pois = model.poisson(t, a);
        for y in 0..y_len {
            mix_pmf[y] += w * pois.pmf[y];
            mix_surv[y] += w * pois.survival[y];
        }
    }

    let mut msg = CounterMessages {
        x,
        xi1,
        a_new: vec![0.0; counters],
        a_old: vec![0.0; counters],
        da_new: vec![0.0; counters],
        da_old: vec![0.0; counters],
    };
    for d in 0..=x {
        let qd = binomial_pmf(x, xi1, d);
        let dq = if with_derivatives {
            binomial_pmf_deriv(x, xi1, d)
        } else {
            0.0
        };
        if qd == 0.0 && dq == 0.0 {
            continue;
        }
        for z_next in (z - d.min(z))..counters {
            let route = if z_next < cap {
                mix_pmf[z_next + d - z]
            } else {
                mix_surv[cap + d - z]
            };
            if route == 0.0 {
                continue;
            }
            let p_old = if all_complete {
                0.0
            } else {
                type_old_prob(model, z, d, z_next)
            };
            let p_new = 1.0 - p_old;
            msg.a_new[z_next] += qd * route * p_new;
            msg.a_old[z_next] += qd * route * p_old;
            if with_derivatives {
                msg.da_new[z_next] += dq * route * p_new;
                msg.da_old[z_next] += dq * route * p_old;
            }
        }
    }
    msg
}

/// One step of the forward scheme, returning the raw (unnormalized-by-fp)
/// next distribution.
fn forward_step(model: &PricingModel, t: usize, layer: &Layer, policy_row: &[Pmf]) -> Vec<f64> {
    let space = model.space;
    let labels = space.labels;
    let g = model.spec.service.as_slice();
    let mut next = vec![0.0; space.len()];
    // Coefficients of the fresh-label pmf per next counter, shared across z.
    let mut fresh_coef = vec![0.0; space.counters];
    for z in 0..space.counters {
        let mass = layer.mu_z[z];
        if mass == 0.0 {
            continue;
        }
        let msg = counter_messages(model, t, &policy_row[z], &layer.xi[z], z, false);
        for (z_next, &a) in msg.a_new.iter().enumerate() {
            fresh_coef[z_next] += mass * a;
        }
        if msg.xi1 < 1.0 {
            let denom = 1.0 - msg.xi1;
            let xi = &layer.xi[z];
            for (z_next, &a) in msg.a_old.iter().enumerate() {
                let coef = mass * a;
                if coef == 0.0 {
                    continue;
                }
                let base = z_next * labels;
                for i in 0..labels - 1 {
                    next[base + i] += coef * xi[i + 1] / denom;
                }
            }
        }
    }
    for (z_next, &coef) in fresh_coef.iter().enumerate() {
        if coef == 0.0 {
            continue;
        }
        let base = z_next * labels;
        for (i, &gi) in g.iter().enumerate() {
            next[base + i] += coef * gi;
        }
    }
    next
}

/// Terminal layer of the backward scheme:
/// `sigma^(T)(z,l) = c^(T) + r̂^(T)(z) + mass · ∂c^(T)/∂mu(z,l)`.
fn sigma_terminal(model: &PricingModel, layer: &Layer) -> Vec<f64> {
    let space = model.space;
    let active = model.spec.penalty.is_active();
    let constant = if active {
        penalty_constant(model, &layer.mu)
    } else {
        0.0
    };
    let mass: f64 = layer.mu_z.iter().sum();
    let mut sigma = vec![0.0; space.len()];
    for z in 0..space.counters {
        let dc = if active {
            penalty_partial(model, &layer.mu, z)
        } else {
            0.0
        };
        let v = constant - model.spec.c_t * z as f64 + mass * dc;
        let base = z * space.labels;
        for slot in sigma[base..base + space.labels].iter_mut() {
            *slot = v;
        }
    }
    sigma
}

/// One backward step: sigma at epoch `t` and the per-counter Qbar rows
/// (including the distribution-dependent constant). Derivative terms are
/// included exactly for the counters that carry mass, matching the generic
/// recursion's mass-weighted sums.
pub fn efficient_sigma_step(
    model: &PricingModel,
    t: usize,
    layer_mu: &[f64],
    policy_row: &[Pmf],
    sigma_next: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let layer = Layer::from_mu(model, layer_mu.to_vec());
    efficient_sigma_step_layer(model, t, &layer, policy_row, sigma_next)
}

fn efficient_sigma_step_layer(
    model: &PricingModel,
    t: usize,
    layer: &Layer,
    policy_row: &[Pmf],
    sigma_next: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let space = model.space;
    let labels = space.labels;
    let counters = space.counters;
    let cap = model.spec.n + model.spec.b;
    let g = model.spec.service.as_slice();
    let n_actions = model.spec.action_count();

    let penalized = model.penalty_applies(t);
    let constant = if penalized {
        penalty_constant(model, &layer.mu)
    } else {
        0.0
    };
    let mass: f64 = layer.mu_z.iter().sum();

    // Backward message for fresh labels, shared across counters.
    let mut b_new = vec![0.0; counters];
    for (z_next, slot) in b_new.iter_mut().enumerate() {
        let base = z_next * labels;
        *slot = g
            .iter()
            .zip(sigma_next[base..base + labels].iter())
            .map(|(&gi, &s)| gi * s)
            .sum();
    }

    let mut sigma = vec![0.0; space.len()];
    let mut qbar = vec![vec![0.0; n_actions]; counters];

    let mut b_old = vec![0.0; counters];
    let mut fos = vec![0.0; labels];
    for z in 0..counters {
        let reachable = layer.mu_z[z] > 0.0;
        let xi = &layer.xi[z];
        let msg = counter_messages(model, t, &policy_row[z], xi, z, reachable);
        let x = msg.x;
        let has_old = msg.xi1 < 1.0;
        let denom = 1.0 - msg.xi1;

        // Old-type backward message for this counter's conditional.
        if has_old {
            for (z_next, slot) in b_old.iter_mut().enumerate() {
                let base = z_next * labels;
                let mut acc = 0.0;
                for i in 0..labels - 1 {
                    acc += xi[i + 1] * sigma_next[base + i];
                }
                *slot = acc / denom;
            }
        } else {
            b_old.fill(0.0);
        }

        // Reward aggregates over the policy row.
        let theta = &policy_row[z];
        let wait = waiting_cost(model, z);
        let mut rbar = 0.0;
        let mut rdbar = 0.0;
        for (a, &w) in theta.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            rbar += w * (revenue(model, t, xi, z, a) + wait);
            if reachable {
                rdbar += w * revenue_xi1_deriv(model, t, xi, z, a);
            }
        }

        // Σ_{z',k'} f·b and the derivative analogue.
        let mut fsum = 0.0;
        let mut dfsum = 0.0;
        let mut s2 = 0.0;
        for z_next in 0..counters {
            fsum += msg.a_new[z_next] * b_new[z_next];
            dfsum += msg.da_new[z_next] * b_new[z_next];
            if has_old {
                fsum += msg.a_old[z_next] * b_old[z_next];
                dfsum += msg.da_old[z_next] * b_old[z_next];
                s2 += msg.a_old[z_next] * b_old[z_next];
            }
        }

        // fos[i] = Σ_z' f_old(z, z') sigma'(z', label storage i).
        if has_old && reachable {
            for (i, slot) in fos.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (z_next, &a) in msg.a_old.iter().enumerate() {
                    if a != 0.0 {
                        acc += a * sigma_next[z_next * labels + i];
                    }
                }
                *slot = acc;
            }
        }

        let dc = if penalized {
            penalty_partial(model, &layer.mu, z)
        } else {
            0.0
        };
        let common = constant + mass * dc + rbar + fsum;
        let base = z * labels;
        for i in 0..labels {
            let mut v = common;
            if reachable {
                let centered_ind = if i == 0 { 1.0 } else { 0.0 } - msg.xi1;
                v += centered_ind * (rdbar + dfsum);
                if has_old && i >= 1 {
                    v += (fos[i - 1] - s2) / denom;
                }
            }
            sigma[base + i] = v;
        }

        // Per-action Qbar row (f_a leaves the action unmixed; b is reused).
        let row = &mut qbar[z];
        if reachable {
            for (a, slot) in row.iter_mut().enumerate() {
                let pois = model.poisson(t, a);
                let mut cont = 0.0;
                for d in 0..=x {
                    let qd = binomial_pmf(x, msg.xi1, d);
                    if qd == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for z_next in (z - d.min(z))..counters {
                        let route = if z_next < cap {
                            pois.pmf[z_next + d - z]
                        } else {
                            pois.survival[cap + d - z]
                        };
                        if route == 0.0 {
                            continue;
                        }
                        let p_old = if has_old {
                            type_old_prob(model, z, d, z_next)
                        } else {
                            0.0
                        };
                        inner += route
                            * (p_old * b_old[z_next] + (1.0 - p_old) * b_new[z_next]);
                    }
                    cont += qd * inner;
                }
                *slot = constant + revenue(model, t, xi, z, a) + wait + cont;
            }
        }
    }
    (sigma, qbar)
}

/// Episode engine for the pricing model running the sum-product schemes.
pub struct QplexEngine<'a> {
    model: &'a PricingModel,
    mu0: Pmf,
}

impl<'a> QplexEngine<'a> {
    pub fn new(model: &'a PricingModel) -> Self {
        QplexEngine {
            model,
            mu0: model.empty_start(),
        }
    }

    pub fn with_start(model: &'a PricingModel, mu0: Pmf) -> Self {
        assert_eq!(mu0.len(), model.space.len());
        QplexEngine { model, mu0 }
    }

    pub fn model(&self) -> &PricingModel {
        self.model
    }

    fn forward_layers(&self, policy: &PartitionedPolicy) -> Result<Vec<Layer>> {
        let model = self.model;
        let horizon = model.spec.horizon;
        let mut layers = Vec::with_capacity(horizon + 1);
        layers.push(Layer::from_mu(model, self.mu0.as_slice().to_vec()));
        for t in 0..horizon {
            let next = forward_step(model, t, &layers[t], &policy.theta()[t]);
            let pmf = Pmf::new(next).map_err(|e| {
                crate::error::Error::ModelContract(format!("forward marginal at t={}: {e}", t + 1))
            })?;
            layers.push(Layer::from_mu(model, pmf.into_vec()));
        }
        Ok(layers)
    }

    fn decomposition(&self, policy: &PartitionedPolicy, layers: &[Layer]) -> RewardDecomposition {
        let model = self.model;
        let horizon = model.spec.horizon;
        let mut revenue_sum = 0.0;
        let mut waiting_sum = 0.0;
        let mut penalty_sum = 0.0;
        let mut per_period = Vec::with_capacity(horizon);
        for (t, layer) in layers.iter().enumerate().take(horizon) {
            let mut rev_t = 0.0;
            let mut wait_t = 0.0;
            for z in 0..model.space.counters {
                let mass = layer.mu_z[z];
                if mass == 0.0 {
                    continue;
                }
                let theta = policy.row(t, z);
                let mut rz = 0.0;
                for (a, &w) in theta.iter().enumerate() {
                    if w != 0.0 {
                        rz += w * revenue(model, t, &layer.xi[z], z, a);
                    }
                }
                rev_t += mass * rz;
                wait_t += mass * waiting_cost(model, z);
            }
            let pen_t = if model.penalty_applies(t) {
                penalty_constant(model, &layer.mu)
            } else {
                0.0
            };
            revenue_sum += rev_t;
            waiting_sum += wait_t;
            penalty_sum += pen_t;
            per_period.push(rev_t + wait_t + pen_t);
        }
        let last = &layers[horizon];
        let terminal_cost: f64 = -model.spec.c_t
            * last
                .mu_z
                .iter()
                .enumerate()
                .map(|(z, &m)| z as f64 * m)
                .sum::<f64>();
        let terminal_penalty = if model.spec.penalty.is_active() {
            penalty_constant(model, &last.mu)
        } else {
            0.0
        };
        penalty_sum += terminal_penalty;
        let terminal = terminal_cost + terminal_penalty;
        let total = per_period.iter().sum::<f64>() + terminal;
        RewardDecomposition {
            per_period,
            terminal,
            components: vec![
                ("revenue".to_string(), revenue_sum),
                ("waiting".to_string(), waiting_sum),
                ("penalty".to_string(), penalty_sum),
                ("terminal_cost".to_string(), terminal_cost),
            ],
            total,
        }
    }
}

impl EpisodeEngine for QplexEngine<'_> {
    fn episode(&self, policy: &PartitionedPolicy) -> Result<EpisodeData> {
        let model = self.model;
        let horizon = model.spec.horizon;
        assert_eq!(policy.horizon(), horizon);
        let layers = self.forward_layers(policy)?;
        let reward = self.decomposition(policy, &layers);

        let mut sigmas = vec![Vec::new(); horizon + 1];
        sigmas[horizon] = sigma_terminal(model, &layers[horizon]);
        let mut qbar = Vec::with_capacity(horizon);
        let mut reach = Vec::with_capacity(horizon);
        for t in (0..horizon).rev() {
            let (sigma_t, qbar_t) = efficient_sigma_step_layer(
                model,
                t,
                &layers[t],
                &policy.theta()[t],
                &sigmas[t + 1],
            );
            sigmas[t] = sigma_t;
            qbar.push(qbar_t);
        }
        qbar.reverse();
        for layer in layers.iter().take(horizon) {
            reach.push(layer.mu_z.clone());
        }

        let trace = MarginalsTrace {
            mu: layers
                .into_iter()
                .map(|l| Pmf::new(l.mu).expect("normalized layer"))
                .collect(),
        };
        Ok(EpisodeData {
            trace,
            sigmas: crate::backward::SigmaTrace { sigma: sigmas },
            qbar: QBarTable { qbar, reach },
            reward,
        })
    }

    fn evaluate(&self, policy: &PartitionedPolicy) -> Result<RewardDecomposition> {
        let layers = self.forward_layers(policy)?;
        Ok(self.decomposition(policy, &layers))
    }
}

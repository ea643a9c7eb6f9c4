//! The pricing model as a plain `NonlinearModel`: kernels and rewards are
//! evaluated through the chain-rule factors directly, and mu-partials come
//! from the conditional-gradient identity
//! `∂h(mu_{|z}) / ∂mu(z, l) = (1 / mu(z)) ∂^ctrd h / ∂xi(l)`.
//!
//! This route scales poorly with the state space and exists as the reference
//! the sum-product implementation is checked against, and to drive the
//! generic engine on small instances.

use crate::model::NonlinearModel;

use super::kernel::{kernel_conditional, kernel_xi_grad_dot};
use super::reward::{penalty_constant, penalty_partial, revenue, revenue_xi1_deriv, waiting_cost};
use super::PricingModel;

impl PricingModel {
    fn xi_buf(&self) -> Vec<f64> {
        vec![0.0; self.space.labels]
    }
}

impl NonlinearModel for PricingModel {
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn state_count(&self) -> usize {
        self.space.len()
    }

    fn action_count(&self) -> usize {
        self.spec.action_count()
    }

    fn kernel(&self, t: usize, mu: &[f64], s: usize, a: usize, out: &mut [f64]) {
        let z = self.space.counter_of(s);
        let mut xi = self.xi_buf();
        self.xi_of(mu, z, &mut xi);
        kernel_conditional(self, t, &xi, z, a, out);
    }

    fn reward(&self, t: usize, mu: &[f64], s: usize, a: usize) -> f64 {
        let z = self.space.counter_of(s);
        let mut xi = self.xi_buf();
        self.xi_of(mu, z, &mut xi);
        let constant = if self.penalty_applies(t) {
            penalty_constant(self, mu)
        } else {
            0.0
        };
        constant + revenue(self, t, &xi, z, a) + waiting_cost(self, z)
    }

    fn terminal_reward(&self, mu: &[f64], s: usize) -> f64 {
        let z = self.space.counter_of(s);
        let constant = if self.spec.penalty.is_active() {
            penalty_constant(self, mu)
        } else {
            0.0
        };
        constant - self.spec.c_t * z as f64
    }

    fn kernel_mu_partial(
        &self,
        t: usize,
        mu: &[f64],
        s: usize,
        a: usize,
        s_next: usize,
        s_partial: usize,
    ) -> f64 {
        let z = self.space.counter_of(s);
        if self.space.counter_of(s_partial) != z {
            return 0.0;
        }
        let mass = self.space.counter_marginal(mu, z);
        if mass <= 0.0 {
            return 0.0;
        }
        let mut xi = self.xi_buf();
        self.xi_of(mu, z, &mut xi);
        let mut weights = vec![0.0; self.space.len()];
        weights[s_next] = 1.0;
        let mut grad = self.xi_buf();
        kernel_xi_grad_dot(self, t, &xi, z, a, &weights, &mut grad);
        grad[self.space.label_of(s_partial) - 1] / mass
    }

    fn kernel_mu_partial_dot(
        &self,
        t: usize,
        mu: &[f64],
        s: usize,
        a: usize,
        weights: &[f64],
        out: &mut [f64],
    ) {
        out.fill(0.0);
        let z = self.space.counter_of(s);
        let mass = self.space.counter_marginal(mu, z);
        if mass <= 0.0 {
            return;
        }
        let mut xi = self.xi_buf();
        self.xi_of(mu, z, &mut xi);
        let mut grad = self.xi_buf();
        kernel_xi_grad_dot(self, t, &xi, z, a, weights, &mut grad);
        let base = z * self.space.labels;
        for (i, &g) in grad.iter().enumerate() {
            out[base + i] = g / mass;
        }
    }

    fn reward_mu_partial(
        &self,
        t: usize,
        mu: &[f64],
        s: usize,
        a: usize,
        s_partial: usize,
    ) -> f64 {
        let z = self.space.counter_of(s);
        let zp = self.space.counter_of(s_partial);
        let mut total = if self.penalty_applies(t) {
            penalty_partial(self, mu, zp)
        } else {
            0.0
        };
        if zp == z {
            let mass = self.space.counter_marginal(mu, z);
            if mass > 0.0 {
                let mut xi = self.xi_buf();
                self.xi_of(mu, z, &mut xi);
                let deriv = revenue_xi1_deriv(self, t, &xi, z, a);
                let lp = self.space.label_of(s_partial);
                let centered = (if lp == 1 { 1.0 } else { 0.0 } - xi[0]) * deriv;
                total += centered / mass;
            }
        }
        total
    }

    fn reward_mu_partial_row(&self, t: usize, mu: &[f64], s: usize, a: usize, out: &mut [f64]) {
        out.fill(0.0);
        let space = self.space;
        if self.penalty_applies(t) {
            for zp in 0..space.counters {
                let v = penalty_partial(self, mu, zp);
                if v != 0.0 {
                    let base = zp * space.labels;
                    for slot in out[base..base + space.labels].iter_mut() {
                        *slot = v;
                    }
                }
            }
        }
        let z = space.counter_of(s);
        let mass = space.counter_marginal(mu, z);
        if mass > 0.0 {
            let mut xi = self.xi_buf();
            self.xi_of(mu, z, &mut xi);
            let deriv = revenue_xi1_deriv(self, t, &xi, z, a);
            if deriv != 0.0 {
                let base = z * space.labels;
                for (i, slot) in out[base..base + space.labels].iter_mut().enumerate() {
                    *slot += (if i == 0 { 1.0 } else { 0.0 } - xi[0]) * deriv / mass;
                }
            }
        }
    }

    fn terminal_mu_partial(&self, mu: &[f64], _s: usize, s_partial: usize) -> f64 {
        if self.spec.penalty.is_active() {
            penalty_partial(self, mu, self.space.counter_of(s_partial))
        } else {
            0.0
        }
    }

    fn component_names(&self) -> Vec<String> {
        ["revenue", "waiting", "penalty", "terminal_cost"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn reward_components(&self, t: usize, mu: &[f64], s: usize, a: usize, out: &mut [f64]) {
        let z = self.space.counter_of(s);
        let mut xi = self.xi_buf();
        self.xi_of(mu, z, &mut xi);
        out[0] = revenue(self, t, &xi, z, a);
        out[1] = waiting_cost(self, z);
        out[2] = if self.penalty_applies(t) {
            penalty_constant(self, mu)
        } else {
            0.0
        };
        out[3] = 0.0;
    }

    fn terminal_components(&self, mu: &[f64], s: usize, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = if self.spec.penalty.is_active() {
            penalty_constant(self, mu)
        } else {
            0.0
        };
        out[3] = -self.spec.c_t * self.space.counter_of(s) as f64;
    }
}

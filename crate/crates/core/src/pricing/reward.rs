//! Reward pieces of the pricing model: revenue, waiting cost, terminal cost,
//! and the service-level penalty carried in the distribution-dependent
//! constant slot.

use super::kernel::{binomial_pmf_deriv, departures_pmf};
use super::PricingModel;

/// Expected revenue `a Σ_d q(d|z) E[min(Y, n+b+d-z)]` at price index `a`.
pub fn revenue(model: &PricingModel, t: usize, xi: &[f64], z: usize, a: usize) -> f64 {
    let price = model.spec.prices[a];
    let pois = model.poisson(t, a);
    if pois.lambda == 0.0 {
        return 0.0;
    }
    let cap_base = model.spec.n + model.spec.b - z;
    let qd = departures_pmf(model, xi, z);
    let mut expect = 0.0;
    for (d, &q) in qd.iter().enumerate() {
        if q != 0.0 {
            expect += q * pois.emin[cap_base + d];
        }
    }
    price * expect
}

/// `∂/∂xi(1)` of the expected revenue (the only coordinate the departures
/// binomial reads). The centered gradient is `(1(l=1) - xi(1))` times this.
pub fn revenue_xi1_deriv(model: &PricingModel, t: usize, xi: &[f64], z: usize, a: usize) -> f64 {
    let price = model.spec.prices[a];
    let pois = model.poisson(t, a);
    if pois.lambda == 0.0 {
        return 0.0;
    }
    let x = model.spec.size_fn(z);
    let cap_base = model.spec.n + model.spec.b - z;
    let mut acc = 0.0;
    for d in 0..=x {
        let dq = binomial_pmf_deriv(x, xi[0], d);
        if dq != 0.0 {
            acc += dq * pois.emin[cap_base + d];
        }
    }
    price * acc
}

/// Per-period waiting cost `-c_W max(0, z - n)` charged on the observed state.
#[inline]
pub fn waiting_cost(model: &PricingModel, z: usize) -> f64 {
    -model.spec.c_w * (z.saturating_sub(model.spec.n)) as f64
}

/// Mass above the service-level threshold: `P[z > zhat]` under `mu`.
pub fn threshold_overflow(model: &PricingModel, mu: &[f64]) -> f64 {
    let space = model.space;
    ((model.spec.penalty.zhat + 1)..space.counters)
        .map(|z| space.counter_marginal(mu, z))
        .sum()
}

/// The penalty constant `-C (max(P[z > zhat] - alpha, 0))^k`, zero when the
/// penalty is inactive.
pub fn penalty_constant(model: &PricingModel, mu: &[f64]) -> f64 {
    let p = &model.spec.penalty;
    if !p.is_active() {
        return 0.0;
    }
    let violation = (threshold_overflow(model, mu) - p.alpha).max(0.0);
    if violation == 0.0 {
        0.0
    } else {
        -p.c * violation.powf(p.k)
    }
}

/// `∂/∂mu(z, l)` of the penalty constant: `-C k v^(k-1)` on states above the
/// threshold when the constraint is violated, with the one-sided choice of
/// zero at the kink `v = 0`.
pub fn penalty_partial(model: &PricingModel, mu: &[f64], z: usize) -> f64 {
    let p = &model.spec.penalty;
    if !p.is_active() || z <= p.zhat {
        return 0.0;
    }
    let violation = (threshold_overflow(model, mu) - p.alpha).max(0.0);
    if violation == 0.0 {
        0.0
    } else {
        -p.c * p.k * violation.powf(p.k - 1.0)
    }
}

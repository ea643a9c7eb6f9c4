//! The chain-rule factors of the QPLEX pricing kernel:
//! departures, routing, customer type, and label, plus their derivatives in
//! the label conditional `xi`.
//!
//! The composed kernel is
//! `p(z',l' | z, a) = Σ_d q(d|z) ρ(z'|z,d,a) Σ_{k'} q(k'|z,d,z') q(l'|z,k')`
//! and never reads the incoming label `l`. When `xi(1) = 1` every in-service
//! customer completes, so all old-type products are zero by convention.

use crate::error::{Error, Result};
use crate::pmf::Pmf;

use super::PricingModel;

/// Binomial point mass `P[Bin(x, p) = d]`.
pub fn binomial_pmf(x: usize, p: f64, d: usize) -> f64 {
    debug_assert!(d <= x);
    let mut coeff = 1.0;
    for i in 0..d {
        coeff *= (x - i) as f64 / (i + 1) as f64;
    }
    coeff * p.powi(d as i32) * (1.0 - p).powi((x - d) as i32)
}

/// `∂/∂p P[Bin(x, p) = d]`, valid on the closed interval including the
/// boundary values `p = 0` and `p = 1`.
pub fn binomial_pmf_deriv(x: usize, p: f64, d: usize) -> f64 {
    if x == 0 {
        return 0.0;
    }
    if d == 0 {
        return -(x as f64) * (1.0 - p).powi(x as i32 - 1);
    }
    if d == x {
        return x as f64 * p.powi(x as i32 - 1);
    }
    // d C(x,d) p^(d-1) (1-p)^(x-d) - (x-d) C(x,d) p^d (1-p)^(x-d-1),
    // written without divisions so the boundaries are exact.
    let mut coeff = 1.0;
    for i in 0..d {
        coeff *= (x - i) as f64 / (i + 1) as f64;
    }
    let term1 = d as f64 * p.powi(d as i32 - 1) * (1.0 - p).powi((x - d) as i32);
    let term2 = (x - d) as f64 * p.powi(d as i32) * (1.0 - p).powi((x - d - 1) as i32);
    coeff * (term1 - term2)
}

/// Departures pmf: `Bin(x(z), xi(1))` over `d in 0..=x(z)`.
pub fn departures_pmf(model: &PricingModel, xi: &[f64], z: usize) -> Vec<f64> {
    let x = model.spec.size_fn(z);
    (0..=x).map(|d| binomial_pmf(x, xi[0], d)).collect()
}

/// Routing pmf over the next counter: Poisson point masses shifted by the
/// departures, with the full-capacity cell absorbing the survival mass.
pub fn routing_pmf(model: &PricingModel, t: usize, z: usize, d: usize, a: usize) -> Vec<f64> {
    let counters = model.space.counters;
    let cap = model.spec.n + model.spec.b;
    let pois = model.poisson(t, a);
    let mut out = vec![0.0; counters];
    for (z_next, slot) in out.iter_mut().enumerate() {
        *slot = if z_next < cap {
            pois.pmf_at(z_next as i64 + d as i64 - z as i64)
        } else {
            pois.survival_at(cap as i64 + d as i64 - z as i64)
        };
    }
    out
}

/// Probability that a uniformly chosen in-service customer at the next epoch
/// is of type old (continuing service). The complement is the new-type
/// probability; an empty next system is all-new by convention.
pub fn type_old_prob(model: &PricingModel, z: usize, d: usize, z_next: usize) -> f64 {
    let x_next = model.spec.size_fn(z_next);
    if x_next == 0 {
        return 0.0;
    }
    let x = model.spec.size_fn(z);
    debug_assert!(d <= x);
    ((x - d) as f64 / x_next as f64).clamp(0.0, 1.0)
}

/// Label pmf of an old-type customer: the shifted, renormalized tail
/// `xi(l'+1) / (1 - xi(1))`. Undefined when every customer completes.
pub fn label_pmf_old(xi: &[f64]) -> Result<Vec<f64>> {
    if xi[0] >= 1.0 {
        return Err(Error::Domain(
            "old-type label pmf undefined when xi(1) = 1".into(),
        ));
    }
    let denom = 1.0 - xi[0];
    let labels = xi.len();
    Ok((0..labels)
        .map(|i| if i + 1 < labels { xi[i + 1] / denom } else { 0.0 })
        .collect())
}

/// Label pmf of a new-type customer: a fresh service-duration draw.
pub fn label_pmf_new(service: &Pmf) -> Vec<f64> {
    service.as_slice().to_vec()
}

/// The composed conditional kernel `p(z', l' | z, a)` at label conditional
/// `xi`, written over the flat state index.
pub fn kernel_conditional(
    model: &PricingModel,
    t: usize,
    xi: &[f64],
    z: usize,
    a: usize,
    out: &mut [f64],
) {
    let space = model.space;
    let labels = space.labels;
    out.fill(0.0);
    let qd = departures_pmf(model, xi, z);
    let fresh = model.spec.service.as_slice();
    let all_complete = xi[0] >= 1.0;
    let shifted: Vec<f64> = if all_complete {
        Vec::new()
    } else {
        label_pmf_old(xi).expect("xi(1) < 1")
    };
    for (d, &qd_d) in qd.iter().enumerate() {
        if qd_d == 0.0 {
            continue;
        }
        let rho = routing_pmf(model, t, z, d, a);
        for (z_next, &rho_z) in rho.iter().enumerate() {
            if rho_z == 0.0 {
                continue;
            }
            let w = qd_d * rho_z;
            let p_old = if all_complete {
                0.0
            } else {
                type_old_prob(model, z, d, z_next)
            };
            let base = z_next * labels;
            if p_old > 0.0 {
                for (i, &s) in shifted.iter().enumerate() {
                    out[base + i] += w * p_old * s;
                }
            }
            let p_new = 1.0 - p_old;
            if p_new > 0.0 {
                for (i, &g) in fresh.iter().enumerate() {
                    out[base + i] += w * p_new * g;
                }
            }
        }
    }
}

/// Centered gradient in `xi` of `Σ_{z',l'} p(z',l'|z,a) w(z',l')` for a
/// fixed weight vector `w` over states, written into `out` (length
/// `labels`). This is the direct differentiation of the chain-rule product;
/// the sum-product path computes the same quantity through its forward and
/// backward messages.
pub fn kernel_xi_grad_dot(
    model: &PricingModel,
    t: usize,
    xi: &[f64],
    z: usize,
    a: usize,
    weights: &[f64],
    out: &mut [f64],
) {
    let space = model.space;
    let labels = space.labels;
    let x = model.spec.size_fn(z);
    let fresh = model.spec.service.as_slice();
    let all_complete = xi[0] >= 1.0;
    let denom = 1.0 - xi[0];

    // Per-(z') label sums of the weights under the two label pmfs.
    let counters = space.counters;
    let mut w_new = vec![0.0; counters];
    let mut w_old = vec![0.0; counters];
    for z_next in 0..counters {
        let base = z_next * labels;
        let mut acc_new = 0.0;
        for (i, &g) in fresh.iter().enumerate() {
            acc_new += g * weights[base + i];
        }
        w_new[z_next] = acc_new;
        if !all_complete {
            let mut acc_old = 0.0;
            for i in 0..labels - 1 {
                acc_old += xi[i + 1] / denom * weights[base + i];
            }
            w_old[z_next] = acc_old;
        }
    }

    // Raw partials before centering.
    let qd = departures_pmf(model, xi, z);
    let mut raw = vec![0.0; labels];
    // (1) Through the departures binomial, which reads xi(1) only.
    let mut through_departures = 0.0;
    for d in 0..=x {
        let dq = binomial_pmf_deriv(x, xi[0], d);
        if dq == 0.0 {
            continue;
        }
        let rho = routing_pmf(model, t, z, d, a);
        let mut inner = 0.0;
        for (z_next, &rho_z) in rho.iter().enumerate() {
            if rho_z == 0.0 {
                continue;
            }
            let p_old = if all_complete {
                0.0
            } else {
                type_old_prob(model, z, d, z_next)
            };
            inner += rho_z * (p_old * w_old[z_next] + (1.0 - p_old) * w_new[z_next]);
        }
        through_departures += dq * inner;
    }
    raw[0] += through_departures;
    // (2) Through the old-type shifted tail:
    // ∂/∂xi(lp) [xi(l'+1)/(1-xi(1))] = 1(lp=l'+1)/(1-xi1) + 1(lp=1) xi(l'+1)/(1-xi1)^2.
    if !all_complete {
        for (d, &qd_d) in qd.iter().enumerate() {
            if qd_d == 0.0 {
                continue;
            }
            let rho = routing_pmf(model, t, z, d, a);
            for (z_next, &rho_z) in rho.iter().enumerate() {
                if rho_z == 0.0 {
                    continue;
                }
                let p_old = type_old_prob(model, z, d, z_next);
                if p_old == 0.0 {
                    continue;
                }
                let w = qd_d * rho_z * p_old;
                let base = z_next * labels;
                raw[0] += w * w_old[z_next] / denom;
                for lp in 2..=labels {
                    // lp = l'+1 with l' = lp-1 (label index lp-2 in storage).
                    raw[lp - 1] += w * weights[base + lp - 2] / denom;
                }
            }
        }
    }

    // Center: subtract Σ_l xi(l) raw(l).
    let mean: f64 = xi.iter().zip(raw.iter()).map(|(&x_l, &r)| x_l * r).sum();
    for (slot, &r) in out.iter_mut().zip(raw.iter()) {
        *slot = r - mean;
    }
}

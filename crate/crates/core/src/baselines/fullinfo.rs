//! Exact full-information MDP: the state tracks the customer count together
//! with the histogram of remaining service durations of the customers in
//! service, so Bellman recursions are exact. The state count explodes
//! combinatorially, which is the whole reason the label-based model exists;
//! this solver is the ground truth for small instances.
//!
//! Within a period the events are: the `h(1)` customers at remaining
//! duration one depart, survivors count down, Poisson arrivals are admitted
//! up to capacity (freed servers included), and every service start draws a
//! duration i.i.d. from the service pmf. Buffered customers carry no
//! duration until they enter service.

use crate::error::{Error, Result};
use crate::policy::PurePolicy;
use crate::pricing::PricingModel;

/// Refuse instances beyond this many full-information states.
pub const FULLINFO_STATE_GUARD: u128 = 5_000_000;

/// Composition tables: histograms over `labels` with a given sum, ranked
/// lexicographically, with incremental add-one-label rank maps.
struct Compositions {
    labels: usize,
    /// `lists[m][rank]` is the histogram with sum `m`.
    lists: Vec<Vec<Vec<u16>>>,
    /// `add1[m][rank * labels + l]` = rank of `h + e_l` in `lists[m + 1]`.
    add1: Vec<Vec<u32>>,
    /// `shift[m][rank]` = (departures `h[0]`, rank of the shifted histogram
    /// in `lists[m - h[0]]`).
    shift: Vec<Vec<(u16, u32)>>,
}

fn enumerate_compositions(labels: usize, m: usize) -> Vec<Vec<u16>> {
    let mut out = Vec::new();
    let mut current = vec![0u16; labels];
    fn rec(out: &mut Vec<Vec<u16>>, current: &mut Vec<u16>, pos: usize, remaining: u16) {
        if pos + 1 == current.len() {
            current[pos] = remaining;
            out.push(current.clone());
            current[pos] = 0;
            return;
        }
        for c in 0..=remaining {
            current[pos] = c;
            rec(out, current, pos + 1, remaining - c);
        }
        current[pos] = 0;
    }
    rec(&mut out, &mut current, 0, m as u16);
    out
}

impl Compositions {
    fn new(labels: usize, max_sum: usize) -> Self {
        let lists: Vec<Vec<Vec<u16>>> = (0..=max_sum)
            .map(|m| enumerate_compositions(labels, m))
            .collect();
        let mut index: Vec<std::collections::HashMap<Vec<u16>, u32>> = lists
            .iter()
            .map(|list| {
                list.iter()
                    .enumerate()
                    .map(|(r, h)| (h.clone(), r as u32))
                    .collect()
            })
            .collect();
        let mut add1 = Vec::with_capacity(max_sum);
        for m in 0..max_sum {
            let mut table = vec![0u32; lists[m].len() * labels];
            for (r, h) in lists[m].iter().enumerate() {
                let mut next = h.clone();
                for l in 0..labels {
                    next[l] += 1;
                    table[r * labels + l] = index[m + 1][&next];
                    next[l] -= 1;
                }
            }
            add1.push(table);
        }
        let mut shift = Vec::with_capacity(max_sum + 1);
        for m in 0..=max_sum {
            let mut table = Vec::with_capacity(lists[m].len());
            for h in &lists[m] {
                let d = h[0];
                let mut shifted = vec![0u16; labels];
                shifted[..labels - 1].copy_from_slice(&h[1..]);
                table.push((d, index[m - d as usize][&shifted]));
            }
            shift.push(table);
        }
        index.clear();
        Compositions {
            labels,
            lists,
            add1,
            shift,
        }
    }

    #[inline]
    fn count(&self, m: usize) -> usize {
        self.lists[m].len()
    }

    #[inline]
    fn add1_rank(&self, m: usize, rank: u32, label: usize) -> u32 {
        self.add1[m][rank as usize * self.labels + label]
    }
}

/// The enumerated full-information model over a pricing instance.
pub struct FullInfo<'a> {
    pub model: &'a PricingModel,
    comps: Compositions,
    /// Global index offset per counter.
    offsets: Vec<usize>,
    pub state_count: usize,
}

/// Bellman solution: optimal value and the optimal action per (t, state).
pub struct FullInfoSolution {
    /// Value of the empty start state.
    pub value: f64,
    /// `policy[t][state]` optimal action index.
    pub policy: Vec<Vec<u8>>,
}

impl<'a> FullInfo<'a> {
    pub fn new(model: &'a PricingModel) -> Result<Self> {
        if model.spec.penalty.is_active() {
            return Err(Error::UnsupportedModel(
                "the full-information MDP cannot represent distribution-dependent penalties"
                    .into(),
            ));
        }
        if model.spec.size_table.is_some() {
            return Err(Error::UnsupportedModel(
                "the full-information baseline models the physical system (no size override)"
                    .into(),
            ));
        }
        let labels = model.space.labels;
        let n = model.spec.n;
        let counters = model.space.counters;
        // Closed-form composition count per counter, guarded before any
        // enumeration work.
        let mut total: u128 = 0;
        for z in 0..counters {
            let m = z.min(n);
            let mut c: u128 = 1;
            for i in 0..labels - 1 {
                c = c * (m as u128 + i as u128 + 1) / (i as u128 + 1);
            }
            total += c;
        }
        if total > FULLINFO_STATE_GUARD {
            return Err(Error::Guard {
                what: "full-information state enumeration".into(),
                size: total,
                limit: FULLINFO_STATE_GUARD,
            });
        }
        let comps = Compositions::new(labels, n);
        let mut offsets = Vec::with_capacity(counters + 1);
        let mut acc = 0usize;
        for z in 0..counters {
            offsets.push(acc);
            acc += comps.count(z.min(n));
        }
        offsets.push(acc);
        debug_assert_eq!(acc as u128, total);
        Ok(FullInfo {
            model,
            comps,
            offsets,
            state_count: acc,
        })
    }

    #[inline]
    pub fn in_service(&self, z: usize) -> usize {
        z.min(self.model.spec.n)
    }

    /// Number of states with counter `z`.
    pub fn states_at(&self, z: usize) -> usize {
        self.comps.count(self.in_service(z))
    }

    pub fn histogram(&self, z: usize, rank: usize) -> &[u16] {
        &self.comps.lists[self.in_service(z)][rank]
    }

    /// Immediate reward for `(z, h, a)` (departures are `h[0]`).
    fn reward(&self, t: usize, z: usize, d: usize, a: usize) -> f64 {
        let spec = &self.model.spec;
        let pois = self.model.poisson(t, a);
        let cap_room = spec.n + spec.b + d - z;
        spec.prices[a] * pois.emin[cap_room] - spec.c_w * z.saturating_sub(spec.n) as f64
    }

    /// Layered averages of a value slice over i.i.d. service draws:
    /// `u[j][rank]` is the expectation of `values[rank of h + (j draws)]`
    /// for `h` of size `x(z') - j`.
    fn u_tables(&self, x_next: usize, values: &[f64]) -> Vec<Vec<f64>> {
        let g = self.model.spec.service.as_slice();
        let mut u = Vec::with_capacity(x_next + 1);
        u.push(values.to_vec());
        for j in 1..=x_next {
            let m = x_next - j;
            let prev = &u[j - 1];
            let mut layer = vec![0.0; self.comps.count(m)];
            for (rank, slot) in layer.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (l, &gl) in g.iter().enumerate() {
                    if gl != 0.0 {
                        acc += gl * prev[self.comps.add1_rank(m, rank as u32, l) as usize];
                    }
                }
                *slot = acc;
            }
            u.push(layer);
        }
        u
    }

    /// One backward step: fills `q_out[state][a]` given the next layer's
    /// values (terminal values when `t = T-1` come from `v_next`).
    fn backward_q(&self, t: usize, v_next: &[f64]) -> Vec<Vec<f64>> {
        let spec = &self.model.spec;
        let counters = self.model.space.counters;
        let cap = spec.n + spec.b;
        let n_actions = spec.action_count();
        // Value averages over future service draws, per next counter.
        let u: Vec<Vec<Vec<f64>>> = (0..counters)
            .map(|z_next| {
                let x_next = self.in_service(z_next);
                let slice = &v_next[self.offsets[z_next]..self.offsets[z_next + 1]];
                self.u_tables(x_next, slice)
            })
            .collect();
        let mut q = vec![vec![0.0; n_actions]; self.state_count];
        for z in 0..counters {
            let m = self.in_service(z);
            for rank in 0..self.comps.count(m) {
                let (d16, base_rank) = self.comps.shift[m][rank];
                let d = d16 as usize;
                let survivors = m - d;
                let state = self.offsets[z] + rank;
                for (a, slot) in q[state].iter_mut().enumerate() {
                    let pois = self.model.poisson(t, a);
                    let mut value = self.reward(t, z, d, a);
                    for z_next in (z - d)..counters {
                        let route = if z_next < cap {
                            pois.pmf[z_next + d - z]
                        } else {
                            pois.survival[cap + d - z]
                        };
                        if route == 0.0 {
                            continue;
                        }
                        let k_new = self.in_service(z_next) - survivors;
                        value += route * u[z_next][k_new][base_rank as usize];
                    }
                    *slot = value;
                }
            }
        }
        q
    }

    fn terminal_values(&self) -> Vec<f64> {
        let counters = self.model.space.counters;
        let c_t = self.model.spec.c_t;
        let mut v = vec![0.0; self.state_count];
        for z in 0..counters {
            for rank in 0..self.states_at(z) {
                v[self.offsets[z] + rank] = -c_t * z as f64;
            }
        }
        v
    }

    /// Optimal value and policy via backward induction.
    pub fn bellman_optimal(&self) -> FullInfoSolution {
        let horizon = self.model.spec.horizon;
        let mut v = self.terminal_values();
        let mut policy = vec![Vec::new(); horizon];
        for t in (0..horizon).rev() {
            let q = self.backward_q(t, &v);
            let mut actions = vec![0u8; self.state_count];
            for (state, row) in q.iter().enumerate() {
                let mut best = 0usize;
                for (a, &value) in row.iter().enumerate().skip(1) {
                    if value > row[best] {
                        best = a;
                    }
                }
                actions[state] = best as u8;
                v[state] = row[best];
            }
            policy[t] = actions;
        }
        FullInfoSolution {
            value: v[self.offsets[0]],
            policy,
        }
    }

    /// Value of an arbitrary per-(t, state) action table (e.g. the optimal
    /// full-information policy itself).
    pub fn evaluate_fullinfo_policy(&self, actions: &[Vec<u8>]) -> f64 {
        let horizon = self.model.spec.horizon;
        let mut v = self.terminal_values();
        for t in (0..horizon).rev() {
            let q = self.backward_q(t, &v);
            for (state, row) in q.iter().enumerate() {
                v[state] = row[actions[t][state] as usize];
            }
        }
        v[self.offsets[0]]
    }

    /// Exact value of a count-based pure policy under the full-information
    /// dynamics.
    pub fn evaluate_count_policy(&self, policy: &PurePolicy) -> Result<f64> {
        self.check_policy(policy)?;
        let horizon = self.model.spec.horizon;
        let counters = self.model.space.counters;
        let mut v = self.terminal_values();
        for t in (0..horizon).rev() {
            let q = self.backward_q(t, &v);
            for z in 0..counters {
                let a = policy.action(t, z);
                for rank in 0..self.states_at(z) {
                    let state = self.offsets[z] + rank;
                    v[state] = q[state][a];
                }
            }
        }
        Ok(v[self.offsets[0]])
    }

    fn check_policy(&self, policy: &PurePolicy) -> Result<()> {
        if policy.horizon() != self.model.spec.horizon
            || policy.expert_count() != self.model.space.counters
        {
            return Err(Error::Domain(
                "count policy dimensions do not match the instance".into(),
            ));
        }
        Ok(())
    }

    /// State distribution per epoch under per-(t, state) actions.
    pub fn forward_distribution(&self, action_of: &dyn Fn(usize, usize) -> usize) -> Vec<Vec<f64>> {
        let spec = &self.model.spec;
        let horizon = spec.horizon;
        let counters = self.model.space.counters;
        let cap = spec.n + spec.b;
        let g = spec.service.as_slice();
        let labels = self.comps.labels;
        let mut dist = Vec::with_capacity(horizon + 1);
        let mut current = vec![0.0; self.state_count];
        current[self.offsets[0]] = 1.0;
        dist.push(current.clone());
        for t in 0..horizon {
            let mut next = vec![0.0; self.state_count];
            for z in 0..counters {
                let m = self.in_service(z);
                for rank in 0..self.comps.count(m) {
                    let state = self.offsets[z] + rank;
                    let mass = dist[t][state];
                    if mass == 0.0 {
                        continue;
                    }
                    let a = action_of(t, state);
                    let pois = self.model.poisson(t, a);
                    let (d16, base_rank) = self.comps.shift[m][rank];
                    let d = d16 as usize;
                    let survivors = m - d;
                    for z_next in (z - d)..counters {
                        let route = if z_next < cap {
                            pois.pmf[z_next + d - z]
                        } else {
                            pois.survival[cap + d - z]
                        };
                        if route == 0.0 {
                            continue;
                        }
                        let k_new = self.in_service(z_next) - survivors;
                        let weight = mass * route;
                        // Scatter the multinomial of k_new service draws,
                        // walking ranks incrementally label by label.
                        self.scatter_draws(
                            &mut next,
                            self.offsets[z_next],
                            survivors,
                            base_rank,
                            k_new,
                            weight,
                            g,
                            labels,
                        );
                    }
                }
            }
            dist.push(next);
        }
        dist
    }

    #[allow(clippy::too_many_arguments)]
    fn scatter_draws(
        &self,
        out: &mut [f64],
        offset: usize,
        base_m: usize,
        base_rank: u32,
        k: usize,
        weight: f64,
        g: &[f64],
        labels: usize,
    ) {
        if k == 0 {
            out[offset + base_rank as usize] += weight;
            return;
        }
        // Choose the count of the first usable label via binomial factors,
        // recurse over the remaining labels.
        fn rec(
            comps: &Compositions,
            out: &mut [f64],
            offset: usize,
            m: usize,
            rank: u32,
            label: usize,
            remaining: usize,
            weight: f64,
            g: &[f64],
            labels: usize,
        ) {
            if remaining == 0 {
                out[offset + rank as usize] += weight;
                return;
            }
            if label + 1 == labels {
                // All remaining draws land on the last label.
                let p = g[label];
                if p == 0.0 {
                    return;
                }
                let mut w = weight;
                let mut r = rank;
                let mut mm = m;
                for _ in 0..remaining {
                    w *= p;
                    r = comps.add1_rank(mm, r, label);
                    mm += 1;
                }
                out[offset + r as usize] += w;
                return;
            }
            let p = g[label];
            // count = 0 branch first.
            rec(comps, out, offset, m, rank, label + 1, remaining, weight, g, labels);
            if p == 0.0 {
                return;
            }
            let mut w = weight;
            let mut r = rank;
            let mut mm = m;
            for c in 1..=remaining {
                // Binomial factor C(remaining, c) built incrementally:
                // w_c = w_{c-1} * p * (remaining - c + 1) / c.
                w *= p * (remaining - c + 1) as f64 / c as f64;
                r = comps.add1_rank(mm, r, label);
                mm += 1;
                rec(comps, out, offset, mm, r, label + 1, remaining - c, w, g, labels);
            }
        }
        rec(
            &self.comps,
            out,
            offset,
            base_m,
            base_rank,
            0,
            k,
            weight,
            g,
            labels,
        );
    }

    /// Extracts a count-based policy from the optimal full-information
    /// policy by averaging its Q-values over the conditional distribution of
    /// the histogram given the counter:
    ///
    /// ```text
    /// Q^(t)(z,h,a) = r^(t)(z,h,a) + Σ_{z'} p^(t)(z'|z,h,a) V^(t+1)(z')
    /// V^(t)(z)     = max_a Σ_h mu^(t)(h|z) Q^(t)(z,h,a)
    /// ```
    ///
    /// with value zero and the lowest action at unreached `(t, z)`.
    pub fn extract_count_policy(&self, solution: &FullInfoSolution) -> PurePolicy {
        let spec = &self.model.spec;
        let horizon = spec.horizon;
        let counters = self.model.space.counters;
        let cap = spec.n + spec.b;
        let n_actions = spec.action_count();
        let dist = self.forward_distribution(&|t, state| solution.policy[t][state] as usize);

        // The count-value recursion starts from the terminal reward, which
        // is a function of the counter alone.
        let mut v_count: Vec<f64> = (0..counters).map(|z| -spec.c_t * z as f64).collect();
        let mut actions = vec![vec![0usize; counters]; horizon];
        for t in (0..horizon).rev() {
            let mut v_next = vec![0.0; counters];
            std::mem::swap(&mut v_next, &mut v_count);
            for z in 0..counters {
                let m = self.in_service(z);
                let z_mass: f64 = (0..self.states_at(z))
                    .map(|rank| dist[t][self.offsets[z] + rank])
                    .sum();
                if z_mass == 0.0 {
                    actions[t][z] = 0;
                    v_count[z] = 0.0;
                    continue;
                }
                let mut q_avg = vec![0.0; n_actions];
                for rank in 0..self.states_at(z) {
                    let state = self.offsets[z] + rank;
                    let mass = dist[t][state];
                    if mass == 0.0 {
                        continue;
                    }
                    let (d16, _) = self.comps.shift[m][rank];
                    let d = d16 as usize;
                    for (a, slot) in q_avg.iter_mut().enumerate() {
                        let pois = self.model.poisson(t, a);
                        let mut q = self.reward(t, z, d, a);
                        for z_next in (z - d)..counters {
                            let route = if z_next < cap {
                                pois.pmf[z_next + d - z]
                            } else {
                                pois.survival[cap + d - z]
                            };
                            q += route * v_next[z_next];
                        }
                        *slot += mass / z_mass * q;
                    }
                }
                let mut best = 0usize;
                for (a, &q) in q_avg.iter().enumerate().skip(1) {
                    if q > q_avg[best] {
                        best = a;
                    }
                }
                actions[t][z] = best;
                v_count[z] = q_avg[best];
            }
        }
        PurePolicy { actions }
    }

    /// Full-information Q-values of a count policy, averaged over the
    /// conditional histogram distribution: `Q_extract^(t)(z,a)` on the
    /// support, with the per-(t, z) reach mass.
    pub fn q_extract(
        &self,
        policy: &PurePolicy,
    ) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
        self.check_policy(policy)?;
        let horizon = self.model.spec.horizon;
        let counters = self.model.space.counters;
        let n_actions = self.model.spec.action_count();
        let dist = self.forward_distribution(&|t, state| {
            let z = match self.offsets.binary_search(&state) {
                Ok(z) => z,
                Err(z) => z - 1,
            };
            policy.action(t, z)
        });

        // Backward policy evaluation keeping full Q rows per epoch.
        let mut q_extract = vec![vec![vec![0.0; n_actions]; counters]; horizon];
        let mut reach = vec![vec![0.0; counters]; horizon];
        let mut v = self.terminal_values();
        for t in (0..horizon).rev() {
            let q = self.backward_q(t, &v);
            for z in 0..counters {
                let z_mass: f64 = (0..self.states_at(z))
                    .map(|rank| dist[t][self.offsets[z] + rank])
                    .sum();
                reach[t][z] = z_mass;
                if z_mass > 0.0 {
                    for rank in 0..self.states_at(z) {
                        let state = self.offsets[z] + rank;
                        let mass = dist[t][state];
                        if mass == 0.0 {
                            continue;
                        }
                        for (a, &qv) in q[state].iter().enumerate() {
                            q_extract[t][z][a] += mass / z_mass * qv;
                        }
                    }
                }
                let a = policy.action(t, z);
                for rank in 0..self.states_at(z) {
                    let state = self.offsets[z] + rank;
                    v[state] = q[state][a];
                }
            }
        }
        Ok((q_extract, reach))
    }
}

/// Alignment metrics between two centered ascent-direction vectors indexed
/// by `(t, z, a)` over a common support: cosine of the angle and the ratio
/// of Euclidean norms (first over second).
pub fn centered_alignment(
    first: &[Vec<Vec<f64>>],
    second: &[Vec<Vec<f64>>],
    support: &dyn Fn(usize, usize) -> bool,
) -> (f64, f64) {
    let mut dot = 0.0;
    let mut norm1 = 0.0;
    let mut norm2 = 0.0;
    for (t, (row1, row2)) in first.iter().zip(second.iter()).enumerate() {
        for (z, (q1, q2)) in row1.iter().zip(row2.iter()).enumerate() {
            if !support(t, z) {
                continue;
            }
            let n_actions = q1.len();
            let mean1: f64 = q1.iter().sum::<f64>() / n_actions as f64;
            let mean2: f64 = q2.iter().sum::<f64>() / n_actions as f64;
            for a in 0..n_actions {
                let c1 = q1[a] - mean1;
                let c2 = q2[a] - mean2;
                dot += c1 * c2;
                norm1 += c1 * c1;
                norm2 += c2 * c2;
            }
        }
    }
    let cosine = dot / (norm1.sqrt() * norm2.sqrt());
    (cosine, (norm1 / norm2).sqrt())
}

//! The QPLEX single-station dynamic-pricing model.
//!
//! A station has `n` homogeneous servers and a buffer of size `b`. The QPLEX
//! state is a pair `(z, l)`: the customer count and the remaining service
//! duration of a uniformly chosen in-service customer (the label). Tracking
//! the label distribution instead of the full residual-duration histogram
//! collapses the state space by orders of magnitude at the cost of making
//! the transition kernel depend on the current state distribution, which is
//! exactly what the nonlinear-MDP engine handles.

pub mod efficient;
pub mod kernel;
pub mod naive;
pub mod reward;

use crate::error::{Error, Result};
use crate::pmf::Pmf;
use crate::poisson::PoissonTable;

/// Reject price convention: the last grid price carries zero demand.
pub const REJECT_PRICE: f64 = 1.1;

/// Service-level penalty parameters: subtracts `C (max(P[z > zhat] - alpha, 0))^k`
/// from the reward at every constrained epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub c: f64,
    pub k: f64,
    pub alpha: f64,
    pub zhat: usize,
}

impl PenaltySpec {
    pub fn none() -> Self {
        PenaltySpec {
            c: 0.0,
            k: 1.0,
            alpha: 0.05,
            zhat: 0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.c > 0.0
    }
}

/// Composite state enumeration `(z, l) -> flat index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QplexStateSpace {
    /// Counter values `0..=n+b`.
    pub counters: usize,
    /// Label values `1..=l_max`.
    pub labels: usize,
}

impl QplexStateSpace {
    pub fn len(&self) -> usize {
        self.counters * self.labels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, label: usize) -> usize {
        debug_assert!(label >= 1 && label <= self.labels);
        z * self.labels + (label - 1)
    }

    #[inline]
    pub fn counter_of(&self, state: usize) -> usize {
        state / self.labels
    }

    #[inline]
    pub fn label_of(&self, state: usize) -> usize {
        state % self.labels + 1
    }

    /// Counter marginal `mu(z) = Σ_l mu(z, l)`.
    pub fn counter_marginal(&self, mu: &[f64], z: usize) -> f64 {
        let base = z * self.labels;
        mu[base..base + self.labels].iter().sum()
    }
}

/// A full queueing/pricing instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingSpec {
    pub n: usize,
    pub b: usize,
    pub horizon: usize,
    /// Ordered price grid; the last entry is the reject price 1.1.
    pub prices: Vec<f64>,
    /// Service-duration pmf over `{1..l_max}` (index `l-1`).
    pub service: Pmf,
    /// Poisson arrival rates `lambda[t][a]`.
    pub lambda: Vec<Vec<f64>>,
    /// Per-period waiting cost per buffered customer.
    pub c_w: f64,
    /// Terminal cost per customer still in the system at the horizon.
    pub c_t: f64,
    pub penalty: PenaltySpec,
    /// Optional size-function override `x[z]`; the default is `min(z, n)`.
    pub size_table: Option<Vec<usize>>,
}

impl PricingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("server count must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.prices.is_empty() {
            return Err(Error::Config("price grid is empty".into()));
        }
        if self
            .prices
            .windows(2)
            .any(|w| w[1] <= w[0])
        {
            return Err(Error::Config("prices must be strictly increasing".into()));
        }
        let last = *self.prices.last().unwrap();
        if (last - REJECT_PRICE).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "last price must be the reject price {REJECT_PRICE}, got {last}"
            )));
        }
        if self.lambda.len() != self.horizon {
            return Err(Error::Config("lambda table horizon mismatch".into()));
        }
        for row in &self.lambda {
            if row.len() != self.prices.len() {
                return Err(Error::Config("lambda table price mismatch".into()));
            }
            if row.iter().any(|&l| l < 0.0 || !l.is_finite()) {
                return Err(Error::Config("arrival rates must be non-negative".into()));
            }
        }
        if self.penalty.zhat > self.n + self.b {
            return Err(Error::Config("penalty threshold beyond capacity".into()));
        }
        if self.penalty.k < 1.0 {
            return Err(Error::Config("penalty exponent must be at least 1".into()));
        }
        if !(0.0 < self.penalty.alpha && self.penalty.alpha < 1.0) {
            return Err(Error::Config("penalty alpha must lie in (0, 1)".into()));
        }
        if let Some(table) = &self.size_table {
            if table.len() != self.n + self.b + 1 {
                return Err(Error::Config("size table length mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn state_space(&self) -> QplexStateSpace {
        QplexStateSpace {
            counters: self.n + self.b + 1,
            labels: self.service.len(),
        }
    }

    /// Number of customers in service when the counter is `z`.
    #[inline]
    pub fn size_fn(&self, z: usize) -> usize {
        match &self.size_table {
            Some(table) => table[z],
            None => z.min(self.n),
        }
    }

    pub fn mean_service(&self) -> f64 {
        self.service
            .iter()
            .enumerate()
            .map(|(i, &g)| (i + 1) as f64 * g)
            .sum()
    }

    pub fn action_count(&self) -> usize {
        self.prices.len()
    }
}

/// The canonical price grid `{0.1, 0.2, ..., 1.0, 1.1}`.
pub fn default_prices() -> Vec<f64> {
    (1..=11).map(|i| i as f64 / 10.0).collect()
}

/// Named service-duration distributions: four discrete uniforms.
pub fn named_service_pmf(name: &str) -> Result<Pmf> {
    let weights: Vec<f64> = match name {
        "Uni" => (1..=20).map(|_| 1.0).collect(),
        "UniM" => (1..=20).map(|l| if l >= 11 { 1.0 } else { 0.0 }).collect(),
        "UniH" => (1..=20).map(|l| if l >= 16 { 1.0 } else { 0.0 }).collect(),
        "BB" => (1..=20)
            .map(|l| if l <= 5 || l >= 16 { 1.0 } else { 0.0 })
            .collect(),
        _ => {
            return Err(Error::Config(format!(
                "unknown service pmf '{name}' (known: Uni, UniM, UniH, BB)"
            )))
        }
    };
    Pmf::normalized(weights)
}

/// Named arrival-shape vectors over a 50-period horizon. All are piecewise
/// constant with unit time average after normalization.
pub fn named_shape(name: &str, horizon: usize) -> Result<Vec<f64>> {
    let blocks: &[(usize, f64)] = match name {
        // Two high plateaus, a valley, a partial recovery, then decline.
        "DEC" => &[(6, 2.0), (6, 1.7), (3, 1.2), (5, 0.5), (7, 1.0), (9, 0.6), (14, 0.4)],
        // Mirror image of DEC.
        "INC" => &[(14, 0.4), (9, 0.6), (7, 1.0), (5, 0.5), (3, 1.2), (6, 1.7), (6, 2.0)],
        // Alternating high/low plateaus.
        "ALT" => &[(5, 1.6), (5, 0.4), (5, 1.6), (5, 0.4), (5, 1.6), (5, 0.4), (5, 1.6), (5, 0.4), (5, 1.6), (5, 0.4)],
        "CON" => &[(50, 1.0)],
        _ => {
            return Err(Error::Config(format!(
                "unknown shape '{name}' (known: DEC, INC, ALT, CON)"
            )))
        }
    };
    let mut raw = Vec::with_capacity(50);
    for &(len, level) in blocks {
        raw.extend(std::iter::repeat(level).take(len));
    }
    debug_assert_eq!(raw.len(), 50);
    // Stretch or cut to the requested horizon, then normalize.
    let stretched: Vec<f64> = (0..horizon)
        .map(|t| raw[(t * raw.len()) / horizon])
        .collect();
    normalize_shape(stretched)
}

/// Renormalizes an explicit shape vector to unit time average.
pub fn normalize_shape(shape: Vec<f64>) -> Result<Vec<f64>> {
    if shape.is_empty() {
        return Err(Error::Config("empty shape vector".into()));
    }
    if shape.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::Config("shape values must be non-negative".into()));
    }
    let avg = shape.iter().sum::<f64>() / shape.len() as f64;
    if avg <= 0.0 {
        return Err(Error::Config("shape vector sums to zero".into()));
    }
    Ok(shape.into_iter().map(|s| s / avg).collect())
}

/// Builds the arrival-rate table
/// `lambda^(t)(a) = (n u_avg_max / E[S]) s^(t) (1.1 - a)`,
/// the linear demand model scaled so the minimum price realizes the given
/// maximum average utilization. The reject price gets rate exactly zero.
pub fn build_arrival_table(
    shape: &[f64],
    u_avg_max: f64,
    n: usize,
    mean_service: f64,
    prices: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if !prices
        .last()
        .map(|&p| (p - REJECT_PRICE).abs() < 1e-12)
        .unwrap_or(false)
    {
        return Err(Error::Config("price grid must end at the reject price".into()));
    }
    let shape = normalize_shape(shape.to_vec())?;
    let peak = n as f64 * u_avg_max / mean_service;
    Ok(shape
        .iter()
        .map(|&s| {
            prices
                .iter()
                .map(|&a| {
                    if (a - REJECT_PRICE).abs() < 1e-12 {
                        0.0
                    } else {
                        peak * s * (REJECT_PRICE - a)
                    }
                })
                .collect()
        })
        .collect())
}

/// The pricing spec with everything precomputed for kernel evaluation:
/// per-(t, price) Poisson tables sized for the routing and revenue sums.
#[derive(Debug)]
pub struct PricingModel {
    pub spec: PricingSpec,
    pub space: QplexStateSpace,
    pois: Vec<Vec<PoissonTable>>,
}

impl PricingModel {
    pub fn new(spec: PricingSpec) -> Result<Self> {
        spec.validate()?;
        let space = spec.state_space();
        let x_max = (0..space.counters).map(|z| spec.size_fn(z)).max().unwrap();
        let len = spec.n + spec.b + x_max + 2;
        let pois = spec
            .lambda
            .iter()
            .map(|row| row.iter().map(|&l| PoissonTable::new(l, len)).collect())
            .collect();
        Ok(PricingModel { spec, space, pois })
    }

    #[inline]
    pub fn poisson(&self, t: usize, a: usize) -> &PoissonTable {
        &self.pois[t][a]
    }

    /// Initial distribution: the empty system. The label coordinate is
    /// immaterial at `z = 0`; mass sits on label 1.
    pub fn empty_start(&self) -> Pmf {
        Pmf::point(self.space.len(), self.space.index(0, 1))
    }

    /// Expert assignment for count-based policies: one expert per counter.
    pub fn count_assignment(&self) -> Vec<usize> {
        (0..self.space.len())
            .map(|s| self.space.counter_of(s))
            .collect()
    }

    /// Uniform-on-prices initial policy over the counter experts.
    pub fn uniform_count_policy(&self) -> crate::policy::PartitionedPolicy {
        crate::policy::PartitionedPolicy::uniform(
            self.spec.horizon,
            self.space.counters,
            self.spec.action_count(),
            self.count_assignment(),
        )
    }

    /// Label conditional `mu_{|z}`, falling back to the service pmf when the
    /// counter carries no mass (the fallback never affects any quantity that
    /// is weighted by that mass).
    pub fn xi_of(&self, mu: &[f64], z: usize, out: &mut [f64]) -> bool {
        let labels = self.space.labels;
        let base = z * labels;
        let mass: f64 = mu[base..base + labels].iter().sum();
        if mass > 0.0 {
            for (l, slot) in out.iter_mut().enumerate() {
                *slot = mu[base + l] / mass;
            }
            true
        } else {
            out.copy_from_slice(self.spec.service.as_slice());
            false
        }
    }

    /// Whether the per-period reward at epoch `t` carries the penalty term.
    /// The constrained epochs are `t = 1..T` (the time-0 distribution is
    /// fixed, so no penalty applies there); the `t = T` share lives in the
    /// terminal reward.
    #[inline]
    pub fn penalty_applies(&self, t: usize) -> bool {
        self.spec.penalty.is_active() && t >= 1
    }
}

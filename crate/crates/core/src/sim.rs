//! Discrete-event Monte Carlo simulation of the physical queueing system.
//!
//! This is the ground truth the deterministic solver is validated against:
//! actual customers with sampled service durations, Poisson arrivals, and
//! the same within-period event order as the full-information model
//! (departures, label decrement, arrivals admitted up to capacity, service
//! starts drawing durations).
//!
//! Replication `r` always uses random stream `(seed, r)` and partial sums
//! are combined over fixed-size chunks in fixed order, so results are
//! bit-identical across thread counts.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::PurePolicy;
use crate::pricing::PricingModel;
use crate::rng::{derive_seed, StreamRng};

/// Replications per accumulation chunk. Fixed so the reduction tree does not
/// depend on the thread count.
const CHUNK: usize = 4096;

/// Aggregated simulation output with 99.7% (three standard error) intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mean: f64,
    pub revenue: f64,
    pub waiting: f64,
    pub terminal: f64,
    pub std_error: f64,
    /// Three standard errors.
    pub ci_halfwidth: f64,
    /// Per-period estimates of `P[z > zhat]` at times `1..=T`, with
    /// binomial standard errors.
    pub violation: Vec<(f64, f64)>,
    pub reps: u64,
}

impl SimResult {
    pub fn max_violation(&self) -> f64 {
        self.violation.iter().map(|&(p, _)| p).fold(0.0, f64::max)
    }
}

/// Physical system state: customer count plus the histogram of remaining
/// service durations of the customers in service. Buffered customers carry
/// no duration until they enter service.
#[derive(Debug, Clone)]
pub struct PhysicalState {
    pub z: usize,
    /// `h[i]` customers in service with `i + 1` periods remaining.
    pub h: Vec<u32>,
}

impl PhysicalState {
    pub fn empty(labels: usize) -> Self {
        PhysicalState {
            z: 0,
            h: vec![0; labels],
        }
    }

    pub fn in_service(&self) -> u32 {
        self.h.iter().sum()
    }
}

/// Outcome of one period transition.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub departed: u32,
    pub admitted: u32,
}

/// Advances the physical system one period under price index `a`:
/// customers at remaining duration one depart, the rest count down,
/// Poisson arrivals are admitted up to capacity (freed servers included),
/// and every service start draws a fresh duration.
pub fn step_physical(
    model: &PricingModel,
    state: &mut PhysicalState,
    t: usize,
    a: usize,
    service_cdf: &[f64],
    rng: &mut StreamRng,
) -> StepOutcome {
    let spec = &model.spec;
    let labels = model.space.labels;
    let departed = state.h[0];
    for i in 0..labels - 1 {
        state.h[i] = state.h[i + 1];
    }
    state.h[labels - 1] = 0;
    let z_mid = state.z - departed as usize;
    let room = spec.n + spec.b - z_mid;
    let arrivals = sample_poisson(model, t, a, rng);
    let admitted = arrivals.min(room) as u32;
    let z_next = z_mid + admitted as usize;
    let in_service = state.in_service() as usize;
    let starts = z_next.min(spec.n) - in_service;
    for _ in 0..starts {
        let duration = sample_cdf(service_cdf, rng);
        state.h[duration] += 1;
    }
    state.z = z_next;
    StepOutcome { departed, admitted }
}

/// Samples a Poisson variate truncated at the table length; every caller
/// caps the value at a capacity below the truncation point, so the
/// truncation never changes a result.
#[inline]
fn sample_poisson(model: &PricingModel, t: usize, a: usize, rng: &mut StreamRng) -> usize {
    let table = model.poisson(t, a);
    if table.lambda == 0.0 {
        return 0;
    }
    let u = rng.next_f64();
    // survival[j] = P[Y >= j] decreases in j; find the largest y with
    // u < 1 - P[Y >= y+1] false, i.e. the smallest y with survival[y+1] <= 1-u.
    let target = 1.0 - u;
    let surv = &table.survival;
    let mut lo = 0usize;
    let mut hi = surv.len() - 1;
    if surv[hi] > target {
        return hi; // tail beyond the table; capped by every caller
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if surv[mid] > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[inline]
fn sample_cdf(cdf: &[f64], rng: &mut StreamRng) -> usize {
    let u = rng.next_f64();
    match cdf.binary_search_by(|probe| probe.partial_cmp(&u).unwrap()) {
        Ok(i) | Err(i) => i.min(cdf.len() - 1),
    }
}

pub fn service_cdf(model: &PricingModel) -> Vec<f64> {
    let mut acc = 0.0;
    model
        .spec
        .service
        .iter()
        .map(|&g| {
            acc += g;
            acc
        })
        .collect()
}

#[derive(Clone)]
struct ChunkSums {
    total: f64,
    total_sq: f64,
    revenue: f64,
    waiting: f64,
    terminal: f64,
    violations: Vec<u64>,
}

impl ChunkSums {
    fn zero(horizon: usize) -> Self {
        ChunkSums {
            total: 0.0,
            total_sq: 0.0,
            revenue: 0.0,
            waiting: 0.0,
            terminal: 0.0,
            violations: vec![0; horizon],
        }
    }

    fn merge(mut self, other: &ChunkSums) -> Self {
        self.total += other.total;
        self.total_sq += other.total_sq;
        self.revenue += other.revenue;
        self.waiting += other.waiting;
        self.terminal += other.terminal;
        for (a, b) in self.violations.iter_mut().zip(other.violations.iter()) {
            *a += b;
        }
        self
    }
}

fn run_chunk(
    model: &PricingModel,
    policy: &PurePolicy,
    service_cdf: &[f64],
    seed: u64,
    first_rep: u64,
    reps: u64,
) -> ChunkSums {
    let spec = &model.spec;
    let horizon = spec.horizon;
    let zhat = spec.penalty.zhat;
    let mut sums = ChunkSums::zero(horizon);
    let labels = model.space.labels;
    for r in first_rep..first_rep + reps {
        let mut rng = StreamRng::new(seed, r);
        let mut state = PhysicalState::empty(labels);
        let mut revenue = 0.0;
        let mut waiting = 0.0;
        for t in 0..horizon {
            let a = policy.action(t, state.z);
            waiting -= spec.c_w * state.z.saturating_sub(spec.n) as f64;
            let outcome = step_physical(model, &mut state, t, a, service_cdf, &mut rng);
            revenue += outcome.admitted as f64 * spec.prices[a];
            if state.z > zhat {
                sums.violations[t] += 1;
            }
        }
        let terminal = -spec.c_t * state.z as f64;
        let total = revenue + waiting + terminal;
        sums.total += total;
        sums.total_sq += total * total;
        sums.revenue += revenue;
        sums.waiting += waiting;
        sums.terminal += terminal;
    }
    sums
}

/// Pairwise reduction in fixed index order (bit-exact regardless of how the
/// chunks were produced).
fn reduce_pairwise(chunks: Vec<ChunkSums>, horizon: usize) -> ChunkSums {
    if chunks.is_empty() {
        return ChunkSums::zero(horizon);
    }
    let mut layer = chunks;
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        let mut it = layer.into_iter();
        while let Some(first) = it.next() {
            match it.next() {
                Some(second) => next.push(first.merge(&second)),
                None => next.push(first),
            }
        }
        layer = next;
    }
    layer.pop().unwrap()
}

/// Simulates a pure count policy for `reps` replications from the empty
/// system. Identical `(spec, policy, reps, seed)` give bit-identical output
/// on any thread count.
pub fn simulate_policy(
    model: &PricingModel,
    policy: &PurePolicy,
    reps: u64,
    seed: u64,
) -> Result<SimResult> {
    if reps == 0 {
        return Err(Error::Domain("at least one replication required".into()));
    }
    if policy.horizon() != model.spec.horizon {
        return Err(Error::Domain(format!(
            "policy horizon {} does not match the instance horizon {}",
            policy.horizon(),
            model.spec.horizon
        )));
    }
    if policy.expert_count() != model.space.counters {
        return Err(Error::Domain("policy counter range mismatch".into()));
    }
    let cdf = service_cdf(model);
    let horizon = model.spec.horizon;
    let n_chunks = (reps as usize).div_ceil(CHUNK);
    let chunks: Vec<ChunkSums> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let first = (c * CHUNK) as u64;
            let len = CHUNK.min(reps as usize - c * CHUNK) as u64;
            run_chunk(model, policy, &cdf, seed, first, len)
        })
        .collect();
    let sums = reduce_pairwise(chunks, horizon);

    let n = reps as f64;
    let mean = sums.total / n;
    let variance = ((sums.total_sq - sums.total * sums.total / n) / (n - 1.0).max(1.0)).max(0.0);
    let std_error = (variance / n).sqrt();
    let violation = sums
        .violations
        .iter()
        .map(|&count| {
            let p = count as f64 / n;
            (p, (p * (1.0 - p) / n).sqrt())
        })
        .collect();
    Ok(SimResult {
        mean,
        revenue: sums.revenue / n,
        waiting: sums.waiting / n,
        terminal: sums.terminal / n,
        std_error,
        ci_halfwidth: 3.0 * std_error,
        violation,
        reps,
    })
}

/// Per-period estimates of `P[z > zhat]` at times `1..=T`.
pub fn estimate_violations(
    model: &PricingModel,
    policy: &PurePolicy,
    reps: u64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    Ok(simulate_policy(model, policy, reps, seed)?.violation)
}

/// One candidate of an exhaustive restricted-class search.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Price index per counter block.
    pub block_prices: Vec<usize>,
    pub sim: SimResult,
    pub feasible: bool,
    /// Higher-replication re-simulation of the top candidates.
    pub refined: Option<SimResult>,
}

#[derive(Debug)]
pub struct ExhaustiveResult {
    /// Feasible candidates ranked by simulated mean (refined where present),
    /// followed by infeasible candidates.
    pub ranked: Vec<Candidate>,
    pub candidates_total: usize,
    pub feasible_total: usize,
}

impl ExhaustiveResult {
    pub fn winner(&self) -> Option<&Candidate> {
        self.ranked.first().filter(|c| c.feasible)
    }
}

pub const EXHAUSTIVE_GUARD: u128 = 100_000;

/// Builds the time-homogeneous pure policy that posts `block_prices[i]` for
/// every counter in `blocks[i]`.
pub fn block_policy(
    model: &PricingModel,
    blocks: &[Vec<usize>],
    block_prices: &[usize],
) -> PurePolicy {
    let counters = model.space.counters;
    let mut per_counter = vec![0usize; counters];
    for (block, &price) in blocks.iter().zip(block_prices.iter()) {
        for &z in block {
            per_counter[z] = price;
        }
    }
    PurePolicy {
        actions: vec![per_counter; model.spec.horizon],
    }
}

/// Exhaustive simulation over a restricted policy class: every combination
/// of prices over counter blocks, time-homogeneous. Feasible candidates
/// (every per-period violation estimate at most alpha) are ranked by mean
/// reward and the top `top_k` re-simulated at `top_reps` replications.
#[allow(clippy::too_many_arguments)]
pub fn exhaustive_restricted(
    model: &PricingModel,
    blocks: &[Vec<usize>],
    price_subset: &[usize],
    reps: u64,
    seed: u64,
    top_k: usize,
    top_reps: u64,
) -> Result<ExhaustiveResult> {
    let mut seen = vec![false; model.space.counters];
    for &z in blocks.iter().flatten() {
        if z >= model.space.counters || seen[z] {
            return Err(Error::Domain("blocks must partition the counters".into()));
        }
        seen[z] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::Domain("blocks must cover every counter".into()));
    }
    let count = (price_subset.len() as u128).pow(blocks.len() as u32);
    if count > EXHAUSTIVE_GUARD {
        return Err(Error::Guard {
            what: "exhaustive restricted search".into(),
            size: count,
            limit: EXHAUSTIVE_GUARD,
        });
    }
    let alpha = model.spec.penalty.alpha;
    let total = count as usize;
    let mut candidates: Vec<Candidate> = (0..total)
        .map(|index| -> Result<Candidate> {
            let mut rest = index;
            let mut block_prices = Vec::with_capacity(blocks.len());
            for _ in 0..blocks.len() {
                block_prices.push(price_subset[rest % price_subset.len()]);
                rest /= price_subset.len();
            }
            let policy = block_policy(model, blocks, &block_prices);
            let sim = simulate_policy(model, &policy, reps, derive_seed(seed, index as u64))?;
            let feasible = sim.max_violation() <= alpha;
            Ok(Candidate {
                block_prices,
                sim,
                feasible,
                refined: None,
            })
        })
        .collect::<Result<_>>()?;

    candidates.sort_by(|a, b| {
        b.feasible
            .cmp(&a.feasible)
            .then(b.sim.mean.partial_cmp(&a.sim.mean).unwrap())
    });
    let feasible_total = candidates.iter().filter(|c| c.feasible).count();
    let refine = top_k.min(feasible_total);
    for (i, candidate) in candidates.iter_mut().take(refine).enumerate() {
        let policy = block_policy(model, blocks, &candidate.block_prices);
        candidate.refined = Some(simulate_policy(
            model,
            &policy,
            top_reps,
            derive_seed(seed, 0x5EED_0000 + i as u64),
        )?);
    }
    // Final ranking by the refined estimates where available.
    candidates[..refine].sort_by(|a, b| {
        let va = a.refined.as_ref().unwrap().mean;
        let vb = b.refined.as_ref().unwrap().mean;
        vb.partial_cmp(&va).unwrap()
    });
    Ok(ExhaustiveResult {
        ranked: candidates,
        candidates_total: total,
        feasible_total,
    })
}

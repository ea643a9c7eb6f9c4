//! The exponentiated Q-ascent training loop.
//!
//! Each episode runs the forward scheme, the backward scheme, the Qbar
//! aggregation, and one multiplicative policy update, until the variance
//! stopping statistic falls below the tolerance or the episode cap is hit.
//! Training is deterministic: no sampling is involved anywhere.

use crate::backward::{backward_sigma, SigmaTrace};
use crate::error::{Error, Result};
use crate::forward::{expected_total_reward, forward_marginals, MarginalsTrace, RewardDecomposition};
use crate::model::NonlinearModel;
use crate::pmf::Pmf;
use crate::policy::{
    exp_q_update, qbar, shared_update, stopping_stat, PartitionedPolicy, QBarTable,
};

/// Everything one episode computes about the current policy.
pub struct EpisodeData {
    pub trace: MarginalsTrace,
    pub sigmas: SigmaTrace,
    pub qbar: QBarTable,
    pub reward: RewardDecomposition,
}

/// Produces the per-episode quantities the training loop needs. The generic
/// engine works for any nonlinear model; structured models (QPLEX pricing)
/// provide a faster engine computing the same quantities.
pub trait EpisodeEngine: Sync {
    fn episode(&self, policy: &PartitionedPolicy) -> Result<EpisodeData>;

    /// Forward-only objective evaluation (used by the adaptive step search).
    fn evaluate(&self, policy: &PartitionedPolicy) -> Result<RewardDecomposition>;
}

/// Episode engine running the generic forward/backward recursions.
pub struct GenericEngine<'a> {
    model: &'a dyn NonlinearModel,
    mu0: Pmf,
}

impl<'a> GenericEngine<'a> {
    pub fn new(model: &'a dyn NonlinearModel, mu0: Pmf) -> Self {
        assert_eq!(mu0.len(), model.state_count());
        GenericEngine { model, mu0 }
    }
}

impl EpisodeEngine for GenericEngine<'_> {
    fn episode(&self, policy: &PartitionedPolicy) -> Result<EpisodeData> {
        let trace = forward_marginals(self.model, policy, &self.mu0)?;
        let sigmas = backward_sigma(self.model, policy, &trace)?;
        let qbar = qbar(self.model, policy, &trace, &sigmas);
        let reward = expected_total_reward(self.model, policy, &trace);
        Ok(EpisodeData {
            trace,
            sigmas,
            qbar,
            reward,
        })
    }

    fn evaluate(&self, policy: &PartitionedPolicy) -> Result<RewardDecomposition> {
        let trace = forward_marginals(self.model, policy, &self.mu0)?;
        Ok(expected_total_reward(self.model, policy, &trace))
    }
}

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub eta: f64,
    pub epsilon: f64,
    pub max_episodes: usize,
    pub adaptive: bool,
    /// Keep a policy snapshot every this many episodes.
    pub snapshot_every: Option<usize>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            eta: 1.0,
            epsilon: 1e-6,
            max_episodes: 10_000,
            adaptive: false,
            snapshot_every: None,
        }
    }
}

/// Cap on step halvings per episode in the adaptive variant. After this many
/// failures the best candidate seen is accepted so the loop cannot stall at
/// numerically flat points.
pub const MAX_HALVINGS: usize = 60;

/// One row of the training trace.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub reward: RewardDecomposition,
    pub stopping_stat: f64,
    /// Learning rate of the update performed at this episode (0 when the
    /// episode stopped without updating).
    pub eta_effective: f64,
    /// False when the adaptive search exhausted its halvings and accepted
    /// the best non-improving candidate.
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub episodes: Vec<EpisodeRecord>,
    pub final_policy: PartitionedPolicy,
    pub snapshots: Vec<(usize, PartitionedPolicy)>,
    pub converged: bool,
}

impl TrainTrace {
    pub fn final_reward(&self) -> &RewardDecomposition {
        &self.episodes.last().expect("at least one episode").reward
    }
}

fn update(policy: &PartitionedPolicy, qbar: &QBarTable, eta: f64) -> Result<PartitionedPolicy> {
    if policy.sharing().is_some() {
        shared_update(policy, qbar, eta)
    } else {
        exp_q_update(policy, qbar, eta)
    }
}

/// Runs exponentiated Q-ascent from `init` (which must be interior).
///
/// With `adaptive` set, each episode's candidate update is accepted only if
/// it improves the objective; otherwise the learning rate is halved and the
/// candidate recomputed, up to `MAX_HALVINGS` times, after which the best
/// candidate seen is accepted. The base learning rate is restored after
/// every acceptance.
pub fn train(
    engine: &dyn EpisodeEngine,
    init: &PartitionedPolicy,
    params: &TrainParams,
) -> Result<TrainTrace> {
    assert!(params.eta > 0.0, "learning rate must be positive");
    assert!(params.epsilon > 0.0, "stopping tolerance must be positive");
    let mut policy = init.clone();
    let mut episodes = Vec::new();
    let mut snapshots = Vec::new();
    let mut converged = false;

    for episode in 0..params.max_episodes {
        let data = engine.episode(&policy)?;
        if !data.reward.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at episode {episode} (stat so far {})",
                episodes
                    .last()
                    .map(|r: &EpisodeRecord| r.stopping_stat)
                    .unwrap_or(f64::NAN)
            )));
        }
        let stat = stopping_stat(&policy, &data.qbar);
        if let Some(every) = params.snapshot_every {
            if episode % every == 0 {
                snapshots.push((episode, policy.clone()));
            }
        }
        if stat < params.epsilon {
            episodes.push(EpisodeRecord {
                episode,
                reward: data.reward,
                stopping_stat: stat,
                eta_effective: 0.0,
                accepted: true,
            });
            converged = true;
            break;
        }

        let (next, eta_effective, accepted) = if params.adaptive {
            adaptive_step(engine, &policy, &data, params.eta)?
        } else {
            (update(&policy, &data.qbar, params.eta)?, params.eta, true)
        };
        episodes.push(EpisodeRecord {
            episode,
            reward: data.reward,
            stopping_stat: stat,
            eta_effective,
            accepted,
        });
        policy = next;
    }

    Ok(TrainTrace {
        episodes,
        final_policy: policy,
        snapshots,
        converged,
    })
}

fn adaptive_step(
    engine: &dyn EpisodeEngine,
    policy: &PartitionedPolicy,
    data: &EpisodeData,
    base_eta: f64,
) -> Result<(PartitionedPolicy, f64, bool)> {
    let current = data.reward.total;
    let mut eta = base_eta;
    let mut best: Option<(f64, f64, PartitionedPolicy)> = None;
    for _ in 0..=MAX_HALVINGS {
        let candidate = update(policy, &data.qbar, eta)?;
        let value = engine.evaluate(&candidate)?.total;
        if value > current {
            return Ok((candidate, eta, true));
        }
        if best.as_ref().map(|(v, _, _)| value > *v).unwrap_or(true) {
            best = Some((value, eta, candidate));
        }
        eta *= 0.5;
    }
    let (_, eta, candidate) = best.expect("at least one candidate");
    Ok((candidate, eta, false))
}

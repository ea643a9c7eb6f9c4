//! Fisher information of the trajectory distribution, computed by the block
//! recursion over the policy-score matrices `K`, the kernel-score matrices
//! `M`, and the accumulated propagation matrices `G`.
//!
//! Policy coordinates are the ambient softmax logits: one coordinate per
//! (expert, action), stacked expert-major, so each time block has dimension
//! `|Z| × |A|`. These blocks exist for verification and diagnostics; the
//! optimizer itself only ever uses the block-diagonal approximation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::forward::MarginalsTrace;
use crate::model::NonlinearModel;
use crate::policy::PartitionedPolicy;

/// All `F^(t1,t2)` blocks plus the `G^(t)` recursion matrices.
#[derive(Debug)]
pub struct FisherBlocks {
    pub horizon: usize,
    /// Ambient dimension of one time block (`|Z| × |A|`).
    pub block_dim: usize,
    /// `blocks[t1][t2]` with `t1 <= t2`; the transposed blocks are implied.
    pub blocks: Vec<Vec<DMatrix<f64>>>,
    /// `g[t]` for `t = 1..=T` (`g[0]` is unused and left empty).
    pub g: Vec<DMatrix<f64>>,
}

impl FisherBlocks {
    pub fn block(&self, t1: usize, t2: usize) -> DMatrix<f64> {
        if t1 <= t2 {
            self.blocks[t1][t2 - t1].clone()
        } else {
            self.blocks[t2][t1 - t2].transpose()
        }
    }

    /// Assembles the full `(T·|Z|·|A|)²` Fisher information matrix.
    pub fn assemble(&self) -> DMatrix<f64> {
        let d = self.block_dim;
        let n = self.horizon * d;
        let mut full = DMatrix::zeros(n, n);
        for t1 in 0..self.horizon {
            for t2 in 0..self.horizon {
                let block = self.block(t1, t2);
                full.view_mut((t1 * d, t2 * d), (d, d)).copy_from(&block);
            }
        }
        full
    }
}

/// Computes every Fisher block per the recursion
///
/// ```text
/// F^(t,t)   = K^(t) + (∇_γ^(t) mu^(t+1)) G^(t+1) (∇_γ^(t) mu^(t+1))ᵀ
/// F^(t1,t2) = (∇_γ^(t1) mu^(t2+1)) G^(t2+1) (∇_γ^(t2) mu^(t2+1))ᵀ
/// G^(T) = 0,  G^(t) = M^(t) + (∇_mu^(t) mu^(t+1)) G^(t+1) (∇_mu^(t) mu^(t+1))ᵀ
/// ```
///
/// with all Jacobians computed analytically from the kernel mu-partials and
/// the softmax score.
pub fn fisher_blocks(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    trace: &MarginalsTrace,
) -> Result<FisherBlocks> {
    if !model.mu_partials_available() {
        return Err(Error::UnsupportedModel(
            "Fisher blocks need kernel mu-partials".into(),
        ));
    }
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
    let experts = policy.expert_count();
    let dim = experts * n_actions;

    // Kernel tables and per-time matrices.
    let mut k_mats = Vec::with_capacity(horizon); // K^(t): dim × dim
    let mut m_mats = Vec::with_capacity(horizon); // M^(t): n × n
    let mut d_mats = Vec::with_capacity(horizon); // ∇_mu^(t) mu^(t+1): n × n
    let mut a_mats = Vec::with_capacity(horizon); // ∇_γ^(t) mu^(t+1): dim × n

    let mut kernel = vec![vec![vec![0.0; n]; n_actions]; n];
    for t in 0..horizon {
        let mu = trace.mu[t].as_slice();
        for (s, rows) in kernel.iter_mut().enumerate() {
            for (a, row) in rows.iter_mut().enumerate() {
                model.kernel(t, mu, s, a, row);
            }
        }

        // K^(t): block-diagonal over experts, reach · (diag θ − θ θᵀ).
        let mut k = DMatrix::zeros(dim, dim);
        let mut reach = vec![0.0; experts];
        for s in 0..n {
            reach[policy.expert_of(s)] += mu[s];
        }
        for z in 0..experts {
            if reach[z] == 0.0 {
                continue;
            }
            let theta = policy.row(t, z);
            for a1 in 0..n_actions {
                for a2 in 0..n_actions {
                    let v = if a1 == a2 {
                        theta.get(a1) - theta.get(a1) * theta.get(a2)
                    } else {
                        -theta.get(a1) * theta.get(a2)
                    };
                    k[(z * n_actions + a1, z * n_actions + a2)] = reach[z] * v;
                }
            }
        }
        k_mats.push(k);

        // M^(t) = E[∇_mu log p · (∇_mu log p)ᵀ], expectation over the support.
        let mut m = DMatrix::zeros(n, n);
        let mut score = vec![0.0; n];
        for s in 0..n {
            if mu[s] == 0.0 {
                continue;
            }
            for a in 0..n_actions {
                let w_sa = mu[s] * policy.prob(t, s, a);
                if w_sa == 0.0 {
                    continue;
                }
                for s_next in 0..n {
                    let p = kernel[s][a][s_next];
                    if p <= 0.0 {
                        continue;
                    }
                    for (sp, slot) in score.iter_mut().enumerate() {
                        *slot = model.kernel_mu_partial(t, mu, s, a, s_next, sp) / p;
                    }
                    let w = w_sa * p;
                    for sp in 0..n {
                        if score[sp] == 0.0 {
                            continue;
                        }
                        for sq in 0..n {
                            m[(sp, sq)] += w * score[sp] * score[sq];
                        }
                    }
                }
            }
        }
        m_mats.push(m);

        // D^(t)[sp][s'] = ∂mu^(t+1)(s')/∂mu^(t)(sp)
        //              = Σ_a π(a|sp) p(s'|sp,a) + Σ_{s̃,a} mu(s̃) π(a|s̃) ∂p(s'|s̃,a)/∂mu(sp).
        let mut d = DMatrix::zeros(n, n);
        for sp in 0..n {
            for a in 0..n_actions {
                let pa = policy.prob(t, sp, a);
                if pa == 0.0 {
                    continue;
                }
                for s_next in 0..n {
                    d[(sp, s_next)] += pa * kernel[sp][a][s_next];
                }
            }
        }
        for s_tilde in 0..n {
            if mu[s_tilde] == 0.0 {
                continue;
            }
            for a in 0..n_actions {
                let w = mu[s_tilde] * policy.prob(t, s_tilde, a);
                if w == 0.0 {
                    continue;
                }
                for s_next in 0..n {
                    for sp in 0..n {
                        d[(sp, s_next)] +=
                            w * model.kernel_mu_partial(t, mu, s_tilde, a, s_next, sp);
                    }
                }
            }
        }
        d_mats.push(d);

        // A^(t)[(z,a)][s'] = θ_z(a) Σ_{s∈S_z} mu(s) (p(s'|s,a) − Σ_ã θ_z(ã) p(s'|s,ã)).
        let mut a_mat = DMatrix::zeros(dim, n);
        for s in 0..n {
            if mu[s] == 0.0 {
                continue;
            }
            let z = policy.expert_of(s);
            let theta = policy.row(t, z);
            for s_next in 0..n {
                let avg: f64 = (0..n_actions)
                    .map(|a| theta.get(a) * kernel[s][a][s_next])
                    .sum();
                for a in 0..n_actions {
                    a_mat[(z * n_actions + a, s_next)] +=
                        theta.get(a) * mu[s] * (kernel[s][a][s_next] - avg);
                }
            }
        }
        a_mats.push(a_mat);
    }

    // G^(T) = 0; G^(t) = M^(t) + D^(t) G^(t+1) D^(t)ᵀ for t = T-1, ..., 1.
    let mut g: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); horizon + 1];
    g[horizon] = DMatrix::zeros(n, n);
    for t in (1..horizon).rev() {
        g[t] = &m_mats[t] + &d_mats[t] * &g[t + 1] * d_mats[t].transpose();
    }

    // Blocks.
    let mut blocks = Vec::with_capacity(horizon);
    for t1 in 0..horizon {
        let mut row = Vec::with_capacity(horizon - t1);
        // Running ∇_γ^(t1) mu^(t2+1) = A^(t1) D^(t1+1) ... D^(t2).
        let mut grad_mu = a_mats[t1].clone();
        for t2 in t1..horizon {
            if t2 > t1 {
                grad_mu *= &d_mats[t2];
            }
            let mut block = &grad_mu * &g[t2 + 1] * a_mats[t2].transpose();
            if t1 == t2 {
                block += &k_mats[t1];
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("Fisher block ({t1}, {t2})")));
            }
            row.push(block);
        }
        blocks.push(row);
    }

    Ok(FisherBlocks {
        horizon,
        block_dim: dim,
        blocks,
        g,
    })
}

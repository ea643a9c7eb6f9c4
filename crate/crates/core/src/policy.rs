//! State-partitioned tabular policies and the exponentiated Q-ascent
//! building blocks: Qbar aggregation, multiplicative updates, the variance
//! stopping statistic, parameter sharing, and local-optimum diagnostics.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::backward::{q_function, SigmaTrace};
use crate::error::{Error, Result};
use crate::forward::MarginalsTrace;
use crate::model::NonlinearModel;
use crate::pmf::Pmf;

/// Parameter-sharing scheme: a partition of experts crossed with a partition
/// of time epochs. Every `(z_block, t_block)` pair is one shared group whose
/// member cells hold identical action pmfs.
#[derive(Debug, Clone)]
pub struct SharingScheme {
    pub z_blocks: Vec<Vec<usize>>,
    pub t_blocks: Vec<Vec<usize>>,
}

impl SharingScheme {
    fn validate(&self, expert_count: usize, horizon: usize) -> Result<()> {
        let mut seen_z = vec![false; expert_count];
        for block in &self.z_blocks {
            for &z in block {
                if z >= expert_count || seen_z[z] {
                    return Err(Error::Domain(format!(
                        "sharing z-blocks do not partition the experts (offender {z})"
                    )));
                }
                seen_z[z] = true;
            }
        }
        if !seen_z.iter().all(|&b| b) {
            return Err(Error::Domain("sharing z-blocks miss some experts".into()));
        }
        let mut seen_t = vec![false; horizon];
        for block in &self.t_blocks {
            for &t in block {
                if t >= horizon || seen_t[t] {
                    return Err(Error::Domain(format!(
                        "sharing t-blocks do not partition the epochs (offender {t})"
                    )));
                }
                seen_t[t] = true;
            }
        }
        if !seen_t.iter().all(|&b| b) {
            return Err(Error::Domain("sharing t-blocks miss some epochs".into()));
        }
        Ok(())
    }
}

/// A tabular policy over a deterministic partition of the state space:
/// one action pmf per (time, expert).
#[derive(Debug, Clone)]
pub struct PartitionedPolicy {
    assignment: Vec<usize>,
    expert_count: usize,
    action_count: usize,
    theta: Vec<Vec<Pmf>>,
    sharing: Option<SharingScheme>,
}

impl PartitionedPolicy {
    pub fn new(
        assignment: Vec<usize>,
        expert_count: usize,
        action_count: usize,
        theta: Vec<Vec<Pmf>>,
        sharing: Option<SharingScheme>,
    ) -> Result<Self> {
        if assignment.iter().any(|&z| z >= expert_count) {
            return Err(Error::Domain("assignment references unknown expert".into()));
        }
        for row in &theta {
            if row.len() != expert_count {
                return Err(Error::Domain("policy table expert dimension mismatch".into()));
            }
            for pmf in row {
                if pmf.len() != action_count {
                    return Err(Error::Domain("policy table action dimension mismatch".into()));
                }
            }
        }
        let policy = PartitionedPolicy {
            assignment,
            expert_count,
            action_count,
            theta,
            sharing,
        };
        if let Some(s) = &policy.sharing {
            s.validate(policy.expert_count, policy.horizon())?;
            policy.check_sharing_consistency()?;
        }
        Ok(policy)
    }

    /// Uniform action pmf for every (time, expert).
    pub fn uniform(
        horizon: usize,
        expert_count: usize,
        actions: usize,
        assignment: Vec<usize>,
    ) -> Self {
        let theta = vec![vec![Pmf::uniform(actions); expert_count]; horizon];
        PartitionedPolicy::new(assignment, expert_count, actions, theta, None)
            .expect("uniform is valid")
    }

    fn check_sharing_consistency(&self) -> Result<()> {
        let scheme = self.sharing.as_ref().unwrap();
        for zb in &scheme.z_blocks {
            for tb in &scheme.t_blocks {
                let (t0, z0) = (tb[0], zb[0]);
                for &t in tb {
                    for &z in zb {
                        if self.theta[t][z] != self.theta[t0][z0] {
                            return Err(Error::Domain(format!(
                                "sharing group holds differing pmfs at (t={t}, z={z})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.theta[t][self.assignment[s]].get(a)
    }

    #[inline]
    pub fn expert_of(&self, s: usize) -> usize {
        self.assignment[s]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn horizon(&self) -> usize {
        self.theta.len()
    }

    pub fn expert_count(&self) -> usize {
        self.expert_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn row(&self, t: usize, z: usize) -> &Pmf {
        &self.theta[t][z]
    }

    pub fn theta(&self) -> &Vec<Vec<Pmf>> {
        &self.theta
    }

    pub fn sharing(&self) -> Option<&SharingScheme> {
        self.sharing.as_ref()
    }

    pub fn set_sharing(&mut self, sharing: Option<SharingScheme>) -> Result<()> {
        self.sharing = sharing;
        if let Some(s) = &self.sharing {
            s.validate(self.expert_count, self.horizon())?;
            self.check_sharing_consistency()?;
        }
        Ok(())
    }

    /// Replaces the table, keeping assignment and sharing.
    fn with_theta(&self, theta: Vec<Vec<Pmf>>) -> Self {
        PartitionedPolicy {
            assignment: self.assignment.clone(),
            expert_count: self.expert_count,
            action_count: self.action_count,
            theta,
            sharing: self.sharing.clone(),
        }
    }

    pub fn is_pure(&self) -> bool {
        self.theta
            .iter()
            .flatten()
            .all(|pmf| pmf.iter().filter(|&&w| w > 0.0).count() == 1)
    }
}

/// Expert-conditional weighted averages of the Q function, plus the mass
/// `reach[t][z] = mu^(t)(S_z)` of each expert.
#[derive(Debug, Clone)]
pub struct QBarTable {
    pub qbar: Vec<Vec<Vec<f64>>>,
    pub reach: Vec<Vec<f64>>,
}

impl QBarTable {
    pub fn horizon(&self) -> usize {
        self.qbar.len()
    }
}

/// `qbar[t][z][a] = Σ_{s in S_z} mu^(t)(s | S_z) Q^(t)(s,a)` when the expert
/// has positive mass at time `t`, and exactly zero otherwise.
pub fn qbar(
    model: &dyn NonlinearModel,
    policy: &PartitionedPolicy,
    trace: &MarginalsTrace,
    sigmas: &SigmaTrace,
) -> QBarTable {
    let horizon = model.horizon();
    let n = model.state_count();
    let n_actions = model.action_count();
    let experts = policy.expert_count();
    let mut table = QBarTable {
        qbar: vec![vec![vec![0.0; n_actions]; experts]; horizon],
        reach: vec![vec![0.0; experts]; horizon],
    };
    for t in 0..horizon {
        let mu = trace.mu[t].as_slice();
        let q = q_function(model, mu, &sigmas.sigma[t + 1], t);
        for s in 0..n {
            let mass = mu[s];
            if mass == 0.0 {
                continue;
            }
            let z = policy.expert_of(s);
            table.reach[t][z] += mass;
            for (a, q_sa) in q[s].iter().enumerate() {
                table.qbar[t][z][a] += mass * q_sa;
            }
        }
        for z in 0..experts {
            let reach = table.reach[t][z];
            if reach > 0.0 {
                for v in table.qbar[t][z].iter_mut() {
                    *v /= reach;
                }
            }
        }
    }
    table
}

fn exp_update_row(theta: &Pmf, exponent: &[f64]) -> Result<Pmf> {
    // Shift by the max exponent for overflow safety; mathematically inert.
    // The floor keeps iterates in the relative interior: exact arithmetic
    // guarantees strict positivity, and without it large steps underflow
    // entries to exact zero.
    let shift = exponent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = theta
        .iter()
        .zip(exponent.iter())
        .map(|(&w, &e)| (w * (e - shift).exp()).max(f64::MIN_POSITIVE))
        .collect();
    Pmf::normalized(weights)
}

/// Multiplicative update `theta'(a) ∝ theta(a) exp(eta Qbar(a))`, applied
/// simultaneously to every reachable (time, expert) cell; unreachable cells
/// are left untouched.
pub fn exp_q_update(
    policy: &PartitionedPolicy,
    qbar: &QBarTable,
    eta: f64,
) -> Result<PartitionedPolicy> {
    assert!(eta > 0.0, "learning rate must be positive");
    let mut theta = policy.theta().clone();
    for (t, theta_t) in theta.iter_mut().enumerate() {
        for (z, row) in theta_t.iter_mut().enumerate() {
            if qbar.reach[t][z] == 0.0 {
                continue;
            }
            if !row.is_interior() {
                return Err(Error::Domain(format!(
                    "update undefined at simplex boundary (t={t}, z={z})"
                )));
            }
            let exponent: Vec<f64> = qbar.qbar[t][z].iter().map(|&q| eta * q).collect();
            *row = exp_update_row(row, &exponent)?;
        }
    }
    Ok(policy.with_theta(theta))
}

/// Shared-parameter update: per group the exponent is the raw (unweighted)
/// sum of the member cells' Qbar values, exactly as the update rule displays
/// it; a mass-weighted variant would be a different algorithm.
pub fn shared_update(
    policy: &PartitionedPolicy,
    qbar: &QBarTable,
    eta: f64,
) -> Result<PartitionedPolicy> {
    assert!(eta > 0.0, "learning rate must be positive");
    let scheme = policy
        .sharing()
        .ok_or_else(|| Error::Domain("shared_update requires a sharing scheme".into()))?
        .clone();
    let n_actions = policy.action_count();
    let mut theta = policy.theta().clone();
    for zb in &scheme.z_blocks {
        for tb in &scheme.t_blocks {
            let mut exponent = vec![0.0; n_actions];
            let mut any_reach = false;
            for &t in tb {
                for &z in zb {
                    if qbar.reach[t][z] > 0.0 {
                        any_reach = true;
                    }
                    for (e, &q) in exponent.iter_mut().zip(qbar.qbar[t][z].iter()) {
                        *e += eta * q;
                    }
                }
            }
            if !any_reach {
                continue;
            }
            let current = &theta[tb[0]][zb[0]];
            if !current.is_interior() {
                return Err(Error::Domain(
                    "shared update undefined at simplex boundary".into(),
                ));
            }
            let updated = exp_update_row(current, &exponent)?;
            for &t in tb {
                for &z in zb {
                    theta[t][z] = updated.clone();
                }
            }
        }
    }
    Ok(policy.with_theta(theta))
}

/// Reach-weighted sum of the per-cell variances of Qbar under the policy:
/// `Σ_t Σ_z mu^(t)(S_z) Var_{A~theta_z^(t)}(Qbar^(t)_z(A))`.
pub fn stopping_stat(policy: &PartitionedPolicy, qbar: &QBarTable) -> f64 {
    let mut stat = 0.0;
    for (t, qbar_t) in qbar.qbar.iter().enumerate() {
        for (z, row) in qbar_t.iter().enumerate() {
            let reach = qbar.reach[t][z];
            if reach == 0.0 {
                continue;
            }
            let theta = policy.row(t, z);
            let mean: f64 = theta.iter().zip(row.iter()).map(|(&w, &q)| w * q).sum();
            let second: f64 = theta.iter().zip(row.iter()).map(|(&w, &q)| w * q * q).sum();
            stat += reach * (second - mean * mean).max(0.0);
        }
    }
    stat
}

/// Replaces each action pmf by a point mass on its mode, ties broken toward
/// the lowest action index (for the pricing model: the lowest price).
pub fn to_pure_policy(policy: &PartitionedPolicy) -> PartitionedPolicy {
    let n_actions = policy.action_count();
    let theta = policy
        .theta()
        .iter()
        .map(|row| {
            row.iter()
                .map(|pmf| Pmf::point(n_actions, pmf.mode()))
                .collect()
        })
        .collect();
    policy.with_theta(theta)
}

/// The approximate natural gradient in softmax coordinates: per (time,
/// expert), the Qbar row centered by its action mean.
pub fn approx_natural_gradient(qbar: &QBarTable) -> Vec<Vec<Vec<f64>>> {
    qbar.qbar
        .iter()
        .map(|qbar_t| {
            qbar_t
                .iter()
                .map(|row| {
                    let mean = row.iter().sum::<f64>() / row.len() as f64;
                    row.iter().map(|&q| q - mean).collect()
                })
                .collect()
        })
        .collect()
}

/// A supported action whose Qbar falls short of the cell maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOptViolation {
    pub t: usize,
    pub z: usize,
    pub action: usize,
    pub gap: f64,
}

/// Checks the local-optimum support condition: for every reachable (time,
/// expert), each action in the support of the policy must have Qbar within
/// `tol` of the cell maximum. Returns the violations found.
pub fn local_opt_check(
    policy: &PartitionedPolicy,
    qbar: &QBarTable,
    tol: f64,
) -> Vec<LocalOptViolation> {
    let mut violations = Vec::new();
    for (t, qbar_t) in qbar.qbar.iter().enumerate() {
        for (z, row) in qbar_t.iter().enumerate() {
            if qbar.reach[t][z] == 0.0 {
                continue;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let theta = policy.row(t, z);
            for (a, &q) in row.iter().enumerate() {
                if theta.get(a) > 0.0 && q < max - tol {
                    violations.push(LocalOptViolation {
                        t,
                        z,
                        action: a,
                        gap: max - q,
                    });
                }
            }
        }
    }
    violations
}

/// A pure count-based policy: one action index per (time, expert).
#[derive(Debug, Clone, PartialEq)]
pub struct PurePolicy {
    pub actions: Vec<Vec<usize>>,
}

impl PurePolicy {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn expert_count(&self) -> usize {
        self.actions[0].len()
    }

    #[inline]
    pub fn action(&self, t: usize, z: usize) -> usize {
        self.actions[t][z]
    }

    pub fn from_policy(policy: &PartitionedPolicy) -> Self {
        let actions = policy
            .theta()
            .iter()
            .map(|row| row.iter().map(Pmf::mode).collect())
            .collect();
        PurePolicy { actions }
    }

    /// Expands to a `PartitionedPolicy` with the given state assignment.
    pub fn to_policy(&self, assignment: Vec<usize>, action_count: usize) -> PartitionedPolicy {
        let theta = self
            .actions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&a| Pmf::point(action_count, a))
                    .collect()
            })
            .collect();
        PartitionedPolicy::new(assignment, self.expert_count(), action_count, theta, None)
            .expect("pure rows are valid pmfs")
    }

    /// Matrix CSV: rows are times, columns are experts, entries action indices.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "t")?;
        for z in 0..self.expert_count() {
            write!(out, ",z{z}")?;
        }
        writeln!(out)?;
        for (t, row) in self.actions.iter().enumerate() {
            write!(out, "{t}")?;
            for &a in row {
                write!(out, ",{a}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty pure-policy file".into()))??;
        let experts = header.split(',').count() - 1;
        if experts == 0 {
            return Err(Error::Parse("pure-policy file has no expert columns".into()));
        }
        let mut actions = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != experts + 1 {
                return Err(Error::Parse(format!(
                    "pure-policy row {i} has {} fields, expected {}",
                    fields.len(),
                    experts + 1
                )));
            }
            let row: std::result::Result<Vec<usize>, _> =
                fields[1..].iter().map(|f| f.trim().parse()).collect();
            actions.push(row.map_err(|e| Error::Parse(format!("pure-policy row {i}: {e}")))?);
        }
        if actions.is_empty() {
            return Err(Error::Parse("pure-policy file has no rows".into()));
        }
        Ok(PurePolicy { actions })
    }
}

/// A policy table detached from any state space: what policy files store.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    pub horizon: usize,
    pub experts: usize,
    pub actions: usize,
    pub theta: Vec<Vec<Pmf>>,
}

impl PolicyTable {
    pub fn from_policy(policy: &PartitionedPolicy) -> Self {
        PolicyTable {
            horizon: policy.horizon(),
            experts: policy.expert_count(),
            actions: policy.action_count(),
            theta: policy.theta().clone(),
        }
    }

    pub fn into_policy(
        self,
        assignment: Vec<usize>,
        sharing: Option<SharingScheme>,
    ) -> Result<PartitionedPolicy> {
        PartitionedPolicy::new(assignment, self.experts, self.actions, self.theta, sharing)
    }
}

/// Writes the structured policy text format: a header followed by one
/// `t z p(a0) p(a1) ...` line per (time, expert) cell.
pub fn save_policy(table: &PolicyTable, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "qdp-policy v1")?;
    writeln!(out, "horizon {}", table.horizon)?;
    writeln!(out, "experts {}", table.experts)?;
    writeln!(out, "actions {}", table.actions)?;
    for (t, row) in table.theta.iter().enumerate() {
        for (z, pmf) in row.iter().enumerate() {
            write!(out, "{t} {z}")?;
            for &w in pmf.iter() {
                write!(out, " {w}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyTable> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines();
    let magic = lines
        .next()
        .ok_or_else(|| Error::Parse("empty policy file".into()))?;
    if magic.trim() != "qdp-policy v1" {
        return Err(Error::Parse(format!("unknown policy header '{magic}'")));
    }
    let mut header = |name: &str| -> Result<usize> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing '{name}' line")))?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some(key), Some(value)) if key == name => value
                .parse()
                .map_err(|e| Error::Parse(format!("bad '{name}' value: {e}"))),
            _ => Err(Error::Parse(format!("malformed '{name}' line: {line}"))),
        }
    };
    let horizon = header("horizon")?;
    let experts = header("experts")?;
    let actions = header("actions")?;
    let mut theta: Vec<Vec<Option<Pmf>>> = vec![vec![None; experts]; horizon];
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != actions + 2 {
            return Err(Error::Parse(format!(
                "policy row has {} fields, expected {}",
                fields.len(),
                actions + 2
            )));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|e| Error::Parse(format!("bad t: {e}")))?;
        let z: usize = fields[1]
            .parse()
            .map_err(|e| Error::Parse(format!("bad z: {e}")))?;
        if t >= horizon || z >= experts {
            return Err(Error::Parse(format!("policy row ({t}, {z}) out of range")));
        }
        let weights: std::result::Result<Vec<f64>, _> =
            fields[2..].iter().map(|f| f.parse()).collect();
        let weights = weights.map_err(|e| Error::Parse(format!("bad probability: {e}")))?;
        theta[t][z] = Some(Pmf::new(weights)?);
    }
    let theta: Result<Vec<Vec<Pmf>>> = theta
        .into_iter()
        .enumerate()
        .map(|(t, row)| {
            row.into_iter()
                .enumerate()
                .map(|(z, pmf)| pmf.ok_or_else(|| Error::Parse(format!("missing row ({t}, {z})"))))
                .collect()
        })
        .collect();
    Ok(PolicyTable {
        horizon,
        experts,
        actions,
        theta: theta?,
    })
}

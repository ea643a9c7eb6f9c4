//! Experiment orchestration: factorial design grids over pricing instances,
//! per-cell method execution, and flat-file result emission.

pub mod csv_io;
pub mod svg;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::fullinfo::FullInfo;
use crate::baselines::geometric::CountMdp;
use crate::config::{InstanceConfig, NamedOrVector, PenaltyConfig};
use crate::error::{Error, Result};
use crate::policy::{to_pure_policy, PurePolicy};
use crate::pricing::efficient::QplexEngine;
use crate::sim::simulate_policy;
use crate::train::{train, EpisodeEngine, TrainParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignPenalty {
    #[serde(rename = "C")]
    pub c: f64,
    pub k: f64,
    pub alpha: f64,
    /// Defaults to the cell's server count (buffer-nonempty constraint).
    pub zhat: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignGrid {
    pub n: Vec<usize>,
    pub b: Vec<usize>,
    pub shape: Vec<String>,
    pub service_pmf: Vec<String>,
    pub u_avg_max: Vec<f64>,
    #[serde(rename = "c_W")]
    pub c_w: Vec<f64>,
    #[serde(rename = "c_T")]
    pub c_t: Vec<f64>,
    pub penalty: Vec<DesignPenalty>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignTrain {
    pub eta: f64,
    pub epsilon: f64,
    pub max_episodes: usize,
    pub adaptive: bool,
}

impl Default for DesignTrain {
    fn default() -> Self {
        DesignTrain {
            eta: 1.0,
            epsilon: 1e-6,
            max_episodes: 10_000,
            adaptive: false,
        }
    }
}

fn default_sim_reps() -> u64 {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSim {
    #[serde(default = "default_sim_reps")]
    pub reps: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentDesign {
    pub version: u32,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub prices: Vec<f64>,
    /// Methods applied to every cell: qdp, bellman-full, bellman-geom,
    /// extract, simulate.
    pub methods: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    pub grid: DesignGrid,
    #[serde(default)]
    pub train: DesignTrain,
    #[serde(default = "default_design_sim")]
    pub sim: DesignSim,
}

fn default_design_sim() -> DesignSim {
    DesignSim {
        reps: default_sim_reps(),
    }
}

pub const KNOWN_METHODS: &[&str] = &["qdp", "bellman-full", "bellman-geom", "extract", "simulate"];

impl ExperimentDesign {
    pub fn parse(text: &str) -> Result<Self> {
        let design: ExperimentDesign =
            toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        if design.version != 1 {
            return Err(Error::Config(format!(
                "unsupported design version {}",
                design.version
            )));
        }
        for method in &design.methods {
            if !KNOWN_METHODS.contains(&method.as_str()) {
                return Err(Error::Config(format!(
                    "unknown method '{method}' (known: {})",
                    KNOWN_METHODS.join(", ")
                )));
            }
        }
        if design.methods.contains(&"extract".to_string())
            && !design.methods.contains(&"bellman-full".to_string())
        {
            return Err(Error::Config(
                "method 'extract' requires 'bellman-full'".into(),
            ));
        }
        Ok(design)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Grid cardinality: the product of the factor level counts.
    pub fn cell_count(&self) -> usize {
        let g = &self.grid;
        g.n.len()
            * g.b.len()
            * g.shape.len()
            * g.service_pmf.len()
            * g.u_avg_max.len()
            * g.c_w.len()
            * g.c_t.len()
            * g.penalty.len()
    }

    /// The factor combination of one cell, in a fixed lexicographic order.
    pub fn cell_factors(&self, index: usize) -> CellFactors {
        let g = &self.grid;
        let mut rest = index;
        let mut pick = |len: usize| {
            let i = rest % len;
            rest /= len;
            i
        };
        let penalty = &g.penalty[pick(g.penalty.len())];
        let c_t = g.c_t[pick(g.c_t.len())];
        let c_w = g.c_w[pick(g.c_w.len())];
        let u_avg_max = g.u_avg_max[pick(g.u_avg_max.len())];
        let service = g.service_pmf[pick(g.service_pmf.len())].clone();
        let shape = g.shape[pick(g.shape.len())].clone();
        let b = g.b[pick(g.b.len())];
        let n = g.n[pick(g.n.len())];
        CellFactors {
            cell: index,
            n,
            b,
            shape,
            service,
            u_avg_max,
            c_w,
            c_t,
            penalty_c: penalty.c,
            penalty_k: penalty.k,
            penalty_alpha: penalty.alpha,
            penalty_zhat: penalty.zhat.unwrap_or(n),
        }
    }

    pub fn instance_config(&self, factors: &CellFactors) -> InstanceConfig {
        InstanceConfig {
            version: 1,
            n: factors.n,
            b: factors.b,
            horizon: self.horizon,
            prices: self.prices.clone(),
            service_pmf: NamedOrVector::Named(factors.service.clone()),
            shape: NamedOrVector::Named(factors.shape.clone()),
            u_avg_max: factors.u_avg_max,
            c_w: factors.c_w,
            c_t: factors.c_t,
            penalty: PenaltyConfig {
                c: factors.penalty_c,
                k: factors.penalty_k,
                alpha: factors.penalty_alpha,
                zhat: factors.penalty_zhat,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFactors {
    pub cell: usize,
    pub n: usize,
    pub b: usize,
    pub shape: String,
    pub service: String,
    pub u_avg_max: f64,
    pub c_w: f64,
    pub c_t: f64,
    pub penalty_c: f64,
    pub penalty_k: f64,
    pub penalty_alpha: f64,
    pub penalty_zhat: usize,
}

/// One method execution on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: usize,
    pub method: String,
    pub value: f64,
    pub revenue: f64,
    pub waiting: f64,
    pub penalty: f64,
    pub terminal_cost: f64,
    pub episodes: u64,
    pub wall_time_s: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Histogram-ready per-cell summary of the method values and derived gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: usize,
    pub config_hash: String,
    pub v_qdp_qplex: Option<f64>,
    pub v_qdp_exact: Option<f64>,
    pub v_mdp_exact: Option<f64>,
    pub v_extract_exact: Option<f64>,
    pub v_geom_exact: Option<f64>,
    pub v_qdp_geom: Option<f64>,
    pub v_qdp_sim: Option<f64>,
    /// (v_qdp_exact - v_qdp_qplex) / v_qdp_exact
    pub qplex_rel_error: Option<f64>,
    /// (v_mdp_exact - v_qdp_exact) / v_mdp_exact
    pub optimality_gap_bound: Option<f64>,
    /// (v_extract_exact - v_qdp_exact) / v_extract_exact
    pub extract_rel_gap: Option<f64>,
    /// (v_geom_exact - v_qdp_geom) / v_geom_exact
    pub geom_rel_gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct CellOutput {
    pub factors: CellFactors,
    pub records: Vec<RunRecord>,
    pub summary: CellSummary,
    pub qdp_policy: Option<PurePolicy>,
}

/// Executes one design cell: trains where requested, solves the exact
/// baselines, cross-evaluates, and summarizes.
pub fn run_cell(design: &ExperimentDesign, index: usize) -> CellOutput {
    let factors = design.cell_factors(index);
    let config = design.instance_config(&factors);
    let mut records = Vec::new();
    let mut summary = CellSummary {
        cell: index,
        config_hash: String::new(),
        v_qdp_qplex: None,
        v_qdp_exact: None,
        v_mdp_exact: None,
        v_extract_exact: None,
        v_geom_exact: None,
        v_qdp_geom: None,
        v_qdp_sim: None,
        qplex_rel_error: None,
        optimality_gap_bound: None,
        extract_rel_gap: None,
        geom_rel_gap: None,
        error: None,
    };
    let run = || -> Result<(Vec<RunRecord>, CellSummary, Option<PurePolicy>)> {
        let hash = config.resolved_hash()?;
        let model = config.to_model()?;
        let mut records = Vec::new();
        let mut summary = summary.clone();
        summary.config_hash = hash.clone();
        let mut qdp_policy: Option<PurePolicy> = None;
        let has = |m: &str| design.methods.iter().any(|x| x == m);

        if has("qdp") {
            let start = Instant::now();
            let engine = QplexEngine::new(&model);
            let trace = train(
                &engine,
                &model.uniform_count_policy(),
                &TrainParams {
                    eta: design.train.eta,
                    epsilon: design.train.epsilon,
                    max_episodes: design.train.max_episodes,
                    adaptive: design.train.adaptive,
                    snapshot_every: None,
                },
            )?;
            let pure = to_pure_policy(&trace.final_policy);
            let value = engine.evaluate(&pure)?;
            summary.v_qdp_qplex = Some(value.total);
            qdp_policy = Some(PurePolicy::from_policy(&pure));
            records.push(RunRecord {
                cell: index,
                method: "qdp".into(),
                value: value.total,
                revenue: value.component("revenue"),
                waiting: value.component("waiting"),
                penalty: value.component("penalty"),
                terminal_cost: value.component("terminal_cost"),
                episodes: trace.episodes.len() as u64,
                wall_time_s: start.elapsed().as_secs_f64(),
                seed: design.seed,
                config_hash: hash.clone(),
            });
        }

        if has("bellman-full") {
            let start = Instant::now();
            let fullinfo = FullInfo::new(&model)?;
            let solution = fullinfo.bellman_optimal();
            summary.v_mdp_exact = Some(solution.value);
            records.push(RunRecord {
                cell: index,
                method: "bellman-full".into(),
                value: solution.value,
                revenue: 0.0,
                waiting: 0.0,
                penalty: 0.0,
                terminal_cost: 0.0,
                episodes: 0,
                wall_time_s: start.elapsed().as_secs_f64(),
                seed: design.seed,
                config_hash: hash.clone(),
            });
            if let Some(policy) = &qdp_policy {
                let start = Instant::now();
                let exact = fullinfo.evaluate_count_policy(policy)?;
                summary.v_qdp_exact = Some(exact);
                records.push(RunRecord {
                    cell: index,
                    method: "qdp-exact".into(),
                    value: exact,
                    revenue: 0.0,
                    waiting: 0.0,
                    penalty: 0.0,
                    terminal_cost: 0.0,
                    episodes: 0,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    seed: design.seed,
                    config_hash: hash.clone(),
                });
            }
            if has("extract") {
                let start = Instant::now();
                let extracted = fullinfo.extract_count_policy(&solution);
                let value = fullinfo.evaluate_count_policy(&extracted)?;
                summary.v_extract_exact = Some(value);
                records.push(RunRecord {
                    cell: index,
                    method: "extract".into(),
                    value,
                    revenue: 0.0,
                    waiting: 0.0,
                    penalty: 0.0,
                    terminal_cost: 0.0,
                    episodes: 0,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    seed: design.seed,
                    config_hash: hash.clone(),
                });
            }
        }

        if has("bellman-geom") {
            let start = Instant::now();
            let mdp = CountMdp::new(&model);
            let solution = mdp.bellman_optimal();
            summary.v_geom_exact = Some(solution.value);
            records.push(RunRecord {
                cell: index,
                method: "bellman-geom".into(),
                value: solution.value,
                revenue: 0.0,
                waiting: 0.0,
                penalty: 0.0,
                terminal_cost: 0.0,
                episodes: 0,
                wall_time_s: start.elapsed().as_secs_f64(),
                seed: design.seed,
                config_hash: hash.clone(),
            });
            if let Some(policy) = &qdp_policy {
                summary.v_qdp_geom = Some(mdp.evaluate(policy)?);
            }
        }

        if has("simulate") {
            if let Some(policy) = &qdp_policy {
                let start = Instant::now();
                let sim = simulate_policy(&model, policy, design.sim.reps, design.seed)?;
                summary.v_qdp_sim = Some(sim.mean);
                records.push(RunRecord {
                    cell: index,
                    method: "simulate".into(),
                    value: sim.mean,
                    revenue: sim.revenue,
                    waiting: sim.waiting,
                    penalty: 0.0,
                    terminal_cost: sim.terminal,
                    episodes: sim.reps,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    seed: design.seed,
                    config_hash: hash.clone(),
                });
            }
        }

        // Derived gap columns.
        if let (Some(qplex), Some(exact)) = (summary.v_qdp_qplex, summary.v_qdp_exact) {
            summary.qplex_rel_error = Some((exact - qplex) / exact);
        }
        if let (Some(mdp), Some(exact)) = (summary.v_mdp_exact, summary.v_qdp_exact) {
            summary.optimality_gap_bound = Some((mdp - exact) / mdp);
        }
        if let (Some(extract), Some(exact)) = (summary.v_extract_exact, summary.v_qdp_exact) {
            summary.extract_rel_gap = Some((extract - exact) / extract);
        }
        if let (Some(geom), Some(qdp_geom)) = (summary.v_geom_exact, summary.v_qdp_geom) {
            summary.geom_rel_gap = Some((geom - qdp_geom) / geom);
        }
        Ok((records, summary, qdp_policy))
    };

    match run() {
        Ok((recs, summ, policy)) => CellOutput {
            factors,
            records: recs,
            summary: summ,
            qdp_policy: policy,
        },
        Err(e) => {
            summary.error = Some(e.to_string());
            records.clear();
            CellOutput {
                factors,
                records,
                summary,
                qdp_policy: None,
            }
        }
    }
}

/// Runs every cell of the design, cells in parallel up to `threads`, and
/// returns outputs in deterministic cell order.
pub fn run_design(design: &ExperimentDesign, threads: usize) -> Vec<CellOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    let mut outputs: Vec<(usize, CellOutput)> = pool.install(|| {
        (0..design.cell_count())
            .into_par_iter()
            .map(|i| (i, run_cell(design, i)))
            .collect()
    });
    outputs.sort_by_key(|(i, _)| *i);
    outputs.into_iter().map(|(_, o)| o).collect()
}

//! CSV emission and parsing for every table the harness writes. Each writer
//! has a parser so files round-trip exactly (floats use the shortest
//! representation that reparses to the same value).

use std::path::Path;

use crate::baselines::qlearn::QLearnResult;
use crate::error::{Error, Result};
use crate::train::TrainTrace;

use super::{CellSummary, RunRecord};

fn opt_to_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn field_to_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|e| Error::Parse(format!("bad float '{s}': {e}")))
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| Error::Parse(format!("bad field '{s}': {e}")))
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "cell",
        "method",
        "value",
        "revenue",
        "waiting",
        "penalty",
        "terminal_cost",
        "episodes",
        "wall_time_s",
        "seed",
        "config_hash",
    ])
    .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.cell.to_string(),
            r.method.clone(),
            r.value.to_string(),
            r.revenue.to_string(),
            r.waiting.to_string(),
            r.penalty.to_string(),
            r.terminal_cost.to_string(),
            r.episodes.to_string(),
            r.wall_time_s.to_string(),
            r.seed.to_string(),
            r.config_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        out.push(RunRecord {
            cell: parse(&row[0])?,
            method: row[1].to_string(),
            value: parse(&row[2])?,
            revenue: parse(&row[3])?,
            waiting: parse(&row[4])?,
            penalty: parse(&row[5])?,
            terminal_cost: parse(&row[6])?,
            episodes: parse(&row[7])?,
            wall_time_s: parse(&row[8])?,
            seed: parse(&row[9])?,
            config_hash: row[10].to_string(),
        });
    }
    Ok(out)
}

pub fn write_summaries(path: &Path, summaries: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "cell",
        "config_hash",
        "v_qdp_qplex",
        "v_qdp_exact",
        "v_mdp_exact",
        "v_extract_exact",
        "v_geom_exact",
        "v_qdp_geom",
        "v_qdp_sim",
        "qplex_rel_error",
        "optimality_gap_bound",
        "extract_rel_gap",
        "geom_rel_gap",
        "error",
    ])
    .map_err(csv_err)?;
    for s in summaries {
        w.write_record([
            s.cell.to_string(),
            s.config_hash.clone(),
            opt_to_field(s.v_qdp_qplex),
            opt_to_field(s.v_qdp_exact),
            opt_to_field(s.v_mdp_exact),
            opt_to_field(s.v_extract_exact),
            opt_to_field(s.v_geom_exact),
            opt_to_field(s.v_qdp_geom),
            opt_to_field(s.v_qdp_sim),
            opt_to_field(s.qplex_rel_error),
            opt_to_field(s.optimality_gap_bound),
            opt_to_field(s.extract_rel_gap),
            opt_to_field(s.geom_rel_gap),
            s.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summaries(path: &Path) -> Result<Vec<CellSummary>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        out.push(CellSummary {
            cell: parse(&row[0])?,
            config_hash: row[1].to_string(),
            v_qdp_qplex: field_to_opt(&row[2])?,
            v_qdp_exact: field_to_opt(&row[3])?,
            v_mdp_exact: field_to_opt(&row[4])?,
            v_extract_exact: field_to_opt(&row[5])?,
            v_geom_exact: field_to_opt(&row[6])?,
            v_qdp_geom: field_to_opt(&row[7])?,
            v_qdp_sim: field_to_opt(&row[8])?,
            qplex_rel_error: field_to_opt(&row[9])?,
            optimality_gap_bound: field_to_opt(&row[10])?,
            extract_rel_gap: field_to_opt(&row[11])?,
            geom_rel_gap: field_to_opt(&row[12])?,
            error: if row[13].is_empty() {
                None
            } else {
                Some(row[13].to_string())
            },
        });
    }
    Ok(out)
}

/// Per-episode training trace: objective decomposition, stopping statistic,
/// and the effective learning rate of the update.
pub fn write_train_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "episode",
        "J",
        "revenue",
        "penalty",
        "stopping_stat",
        "eta_effective",
        "accepted",
    ])
    .map_err(csv_err)?;
    for r in &trace.episodes {
        w.write_record([
            r.episode.to_string(),
            r.reward.total.to_string(),
            r.reward.component("revenue").to_string(),
            r.reward.component("penalty").to_string(),
            r.stopping_stat.to_string(),
            r.eta_effective.to_string(),
            (r.accepted as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows parsed back from a training trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTraceRow {
    pub episode: usize,
    pub objective: f64,
    pub revenue: f64,
    pub penalty: f64,
    pub stopping_stat: f64,
    pub eta_effective: f64,
    pub accepted: bool,
}

pub fn read_train_trace(path: &Path) -> Result<Vec<TrainTraceRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        out.push(TrainTraceRow {
            episode: parse(&row[0])?,
            objective: parse(&row[1])?,
            revenue: parse(&row[2])?,
            penalty: parse(&row[3])?,
            stopping_stat: parse(&row[4])?,
            eta_effective: parse(&row[5])?,
            accepted: &row[6] == "1",
        });
    }
    Ok(out)
}

/// Per-period violation-probability series.
pub fn write_violations(path: &Path, series: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t", "p_hat", "se"]).map_err(csv_err)?;
    for (i, (p, se)) in series.iter().enumerate() {
        w.write_record([(i + 1).to_string(), p.to_string(), se.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_violations(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        out.push((parse(&row[1])?, parse(&row[2])?));
    }
    Ok(out)
}

/// Q-learning curves: one row per evaluation checkpoint per rate.
pub fn write_learning_curves(path: &Path, result: &QLearnResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["episode", "rate", "value_estimate", "ci_halfwidth"])
        .map_err(csv_err)?;
    for curve in &result.curves {
        for point in &curve.points {
            w.write_record([
                point.episode.to_string(),
                curve.rate.to_string(),
                point.value.to_string(),
                point.ci_halfwidth.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_learning_curves(path: &Path) -> Result<Vec<(u64, f64, f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        out.push((parse(&row[0])?, parse(&row[1])?, parse(&row[2])?, parse(&row[3])?));
    }
    Ok(out)
}

/// Counter-marginal dump: one row per (t, z).
pub fn write_counter_marginals(path: &Path, marginals: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t", "z", "probability"]).map_err(csv_err)?;
    for (t, layer) in marginals.iter().enumerate() {
        for (z, &p) in layer.iter().enumerate() {
            w.write_record([t.to_string(), z.to_string(), p.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

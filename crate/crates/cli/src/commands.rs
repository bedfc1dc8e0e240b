//! Bodies of the `compose`, `fit`, `run`, `report` and `feedback`
//! subcommands.

use std::path::{Path, PathBuf};

use nsed_core::agents::{Agent, AgentBinding};
use nsed_core::broker::{
    append_session_log, compose_session, record_feedback, BrokerConfig, CompositionSolution,
    FeedbackEvent, PriorStore, TaskProfile,
};
use nsed_core::orchestrator::{
    mix_seed, run_deliberation, ConstraintSource, OrchestratorConfig, SessionRecord,
};
use nsed_core::telemetry::{self, ExportFormat, InfluenceReport};
use nsed_core::thermo::{fit_with, optimal_stop, utility, FitMode, FitReport, Trajectory};
use nsed_core::{AgentProfile, SessionManifest, Sla};
use serde::{Deserialize, Serialize};

use crate::{ensure_dir, read_json, runtime, write_json, CliError};

pub const MANIFEST_JSON: &str = "manifest.json";
pub const SWEEP_CSV: &str = "lambda_sweep.csv";
pub const FIT_JSON: &str = "fit.json";
pub const CURVE_CSV: &str = "curve.csv";
pub const SESSION_JSON: &str = "session.json";

fn profiles(pool: &[AgentBinding]) -> Vec<AgentProfile> {
    pool.iter()
        .filter(|b| !b.reserve)
        .map(|b| b.profile.clone())
        .collect()
}

/// Human-readable objective breakdown.
pub fn describe(sol: &CompositionSolution, manifest: &SessionManifest) -> String {
    let team: Vec<&str> = sol.agents.iter().map(|a| a.as_str()).collect();
    format!(
        "team: {}\nrounds (t_opt): {}\npredicted utility: {:.4}\npredicted cost: {:.4}\npredicted latency: {:.1}s\nobjective: {:.4}\nsession: {}\n",
        team.join(", "),
        manifest.t_opt,
        sol.predicted_utility,
        sol.predicted_cost,
        sol.predicted_latency_s,
        sol.objective,
        manifest.session_id
    )
}

/// Solves the composition problem and writes the manifest.
pub fn cmd_compose(
    pool: &[AgentBinding],
    task: &TaskProfile,
    sla: &Sla,
    cfg: &BrokerConfig,
    store: Option<&PriorStore>,
    out: &Path,
) -> Result<(SessionManifest, CompositionSolution), CliError> {
    let (manifest, sol) = compose_session(&profiles(pool), task, sla, cfg, store)?;
    ensure_dir(out)?;
    write_json(&out.join(MANIFEST_JSON), &manifest)?;
    Ok((manifest, sol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub cost: f64,
    pub utility: f64,
    pub latency_s: f64,
    pub rounds: u32,
    pub agents: String,
}

/// Re-solves for each cost elasticity and keeps the Pareto-efficient rows
/// (no other row is both cheaper and more useful).
pub fn lambda_sweep(
    pool: &[AgentBinding],
    task: &TaskProfile,
    sla: &Sla,
    cfg: &BrokerConfig,
    lambdas: &[f64],
) -> Result<Vec<SweepRow>, CliError> {
    let profiles = profiles(pool);
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let sla = Sla {
            elasticity: lambda,
            ..*sla
        };
        let (_, sol) = compose_session(&profiles, task, &sla, cfg, None)?;
        rows.push(SweepRow {
            lambda,
            cost: sol.predicted_cost,
            utility: sol.predicted_utility,
            latency_s: sol.predicted_latency_s,
            rounds: sol.t,
            agents: sol
                .agents
                .iter()
                .map(|a| a.as_str())
                .collect::<Vec<_>>()
                .join(";"),
        });
    }
    let dominated = |r: &SweepRow| {
        rows.iter().any(|o| {
            o.cost <= r.cost && o.utility >= r.utility && (o.cost < r.cost || o.utility > r.utility)
        })
    };
    Ok(rows.iter().filter(|r| !dominated(r)).cloned().collect())
}

pub fn write_sweep(rows: &[SweepRow], out: &Path) -> Result<PathBuf, CliError> {
    ensure_dir(out)?;
    Ok(telemetry::write_rows(
        &out.join(SWEEP_CSV),
        &["lambda", "cost", "utility", "latency_s", "rounds", "agents"],
        rows,
    )?)
}

#[derive(Debug, Deserialize)]
struct ObservedRow {
    round: u32,
    accuracy: f64,
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let csv_err = |source| CliError::Csv {
        path: path.into(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut points = Vec::new();
    for row in rdr.deserialize() {
        let row: ObservedRow = row.map_err(csv_err)?;
        points.push((row.round, row.accuracy));
    }
    Ok(Trajectory::new(points)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub round: u32,
    pub observed: f64,
    pub predicted: f64,
}

/// Fits the utility curve to an observed trajectory.
pub fn cmd_fit(
    trajectory: &Path,
    p_g: f64,
    mode: FitMode,
    out: Option<&Path>,
) -> Result<(FitReport, Vec<CurveRow>), CliError> {
    let traj = read_trajectory(trajectory)?;
    let report = fit_with(&traj, p_g, mode)?;
    let curve = traj
        .points()
        .iter()
        .map(|&(round, observed)| {
            Ok(CurveRow {
                round,
                observed,
                predicted: utility(round, &report.params)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if let Some(out) = out {
        ensure_dir(out)?;
        write_json(&out.join(FIT_JSON), &report)?;
        telemetry::write_rows(
            &out.join(CURVE_CSV),
            &["round", "observed", "predicted"],
            &curve,
        )?;
    }
    Ok((report, curve))
}

pub fn describe_fit(r: &FitReport, t_max: u32) -> String {
    let mut s = format!(
        "p_g {:.4}  p_v {:.4}  gap {:.4}\nefficiency {:.4}\nfatigue {:.6}\nR^2 {:.4}",
        r.params.p_g,
        r.params.p_v,
        r.params.gap(),
        r.params.efficiency,
        r.params.fatigue,
        r.r_squared
    );
    if let Some(tail) = r.r_squared_tail {
        s.push_str(&format!(" (rounds >= 2: {tail:.4})"));
    }
    s.push_str(&format!("\nT_opt {}\n", optimal_stop(&r.params, t_max)));
    s
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pool: Vec<AgentBinding>,
    pub task: TaskProfile,
    /// Composed from the pool when absent.
    pub manifest: Option<SessionManifest>,
    pub sla: Sla,
    pub broker: BrokerConfig,
    pub orchestrator: OrchestratorConfig,
    pub inputs: Option<PathBuf>,
    pub out: PathBuf,
}

/// Bound team and hot-swap reserves.
type Seats = (Vec<Box<dyn Agent>>, Vec<Box<dyn Agent>>);

fn bind(pool: &[AgentBinding], manifest: &SessionManifest) -> Result<Seats, CliError> {
    let mut team = Vec::with_capacity(manifest.agents.len());
    for (k, id) in manifest.agents.iter().enumerate() {
        let b = pool
            .iter()
            .find(|b| &b.profile.id == id)
            .ok_or_else(|| CliError::Config(format!("manifest agent {id} is not in the pool")))?;
        team.push(b.instantiate(mix_seed(manifest.seed, k as u64))?);
    }
    let reserves = pool
        .iter()
        .filter(|b| b.reserve && !manifest.agents.contains(&b.profile.id))
        .enumerate()
        .map(|(k, b)| b.instantiate(mix_seed(!manifest.seed, k as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((team, reserves))
}

/// One live session; writes the record, a phase-timing CSV and telemetry.
pub fn cmd_run(cfg: &RunConfig) -> Result<(SessionRecord, InfluenceReport), CliError> {
    let manifest = match &cfg.manifest {
        Some(m) => m.clone(),
        None => compose_session(&profiles(&cfg.pool), &cfg.task, &cfg.sla, &cfg.broker, None)?.0,
    };
    let (team, reserves) = bind(&cfg.pool, &manifest)?;
    let mut inputs = match &cfg.inputs {
        Some(p) => ConstraintSource::file(p),
        None => ConstraintSource::None,
    };
    let rt = runtime()?;
    let record = rt.block_on(run_deliberation(
        &cfg.task,
        &manifest,
        team,
        reserves,
        &cfg.orchestrator,
        &mut inputs,
    ))?;
    let report = InfluenceReport::from_session(&record, cfg.orchestrator.overhead_net_s);
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join(SESSION_JSON), &record)?;
    telemetry::export(&report, &cfg.out, ExportFormat::Csv)?;
    telemetry::export(&report, &cfg.out, ExportFormat::Json)?;
    Ok((record, report))
}

/// Text summary of an exported report directory.
pub fn cmd_report(dir: &Path, planned_rounds: Option<u32>) -> Result<String, CliError> {
    let report = telemetry::import(dir, ExportFormat::Json)?;
    let planned = planned_rounds.or_else(|| {
        read_json::<SessionManifest>(&dir.join(MANIFEST_JSON))
            .ok()
            .map(|m| m.t_opt)
    });
    Ok(telemetry::summarize(&report, planned))
}

/// Folds a finished session's telemetry back into the pool priors.
pub fn cmd_feedback(
    pool_path: &Path,
    manifest: &SessionManifest,
    report: &InfluenceReport,
    store_path: &Path,
    log_path: Option<&Path>,
) -> Result<FeedbackEvent, CliError> {
    let mut pool: Vec<AgentBinding> = read_json(pool_path)?;
    let mut store: PriorStore = if store_path.exists() {
        read_json(store_path)?
    } else {
        PriorStore::default()
    };
    let mut profiles: Vec<AgentProfile> = pool.iter().map(|b| b.profile.clone()).collect();
    let event = record_feedback(&mut profiles, &mut store, manifest, report)?;
    for (b, p) in pool.iter_mut().zip(profiles) {
        b.profile = p;
    }
    write_json(pool_path, &pool)?;
    write_json(store_path, &store)?;
    if let Some(log) = log_path {
        append_session_log(log, &event)?;
    }
    Ok(event)
}

//! Batch Monte Carlo over seeded synthetic tasks.
//!
//! Each replication is one session with freshly seeded agents. Accuracy at
//! round `t` is the share of sessions whose round-`t` winner is correct; a
//! session that halted earlier contributes its last winner.

use std::path::{Path, PathBuf};

use nsed_core::agents::{Agent, AgentBinding, CORRECT_ANSWER};
use nsed_core::broker::{Complexity, TaskProfile};
use nsed_core::orchestrator::{
    mix_seed, run_deliberation, ConstraintSource, OrchestratorConfig, SessionRecord,
};
use nsed_core::telemetry::{
    self, influence_matrix, latency_report, win_rate_matrix, ExportFormat, InfluenceReport,
    LatencyRow, RoundTiming,
};
use nsed_core::{AgentId, ConsensusStrategy, SessionManifest};
use serde::{Deserialize, Serialize};

use crate::{ensure_dir, runtime, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub rounds: u32,
    /// Zero runs every session to the round budget.
    pub epsilon: f64,
    pub gamma_base: f64,
    pub strategy: ConsensusStrategy,
    pub seed: u64,
    pub replications: u32,
    pub timeout_s: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            rounds: 7,
            epsilon: 0.0,
            gamma_base: 0.8,
            strategy: ConsensusStrategy::HistoryMax,
            seed: 0,
            replications: 500,
            timeout_s: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub round: u32,
    pub accuracy: f64,
    pub stderr: f64,
    pub sessions: u32,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub trajectory: Vec<TrajectoryRow>,
    /// Share of sessions whose final answer was correct.
    pub final_accuracy: f64,
    pub report: InfluenceReport,
    pub sessions: Vec<SessionRecord>,
}

impl SimulationResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.trajectory.iter().map(|r| r.accuracy).collect()
    }
}

fn synthetic_task(k: u32) -> TaskProfile {
    TaskProfile {
        description: format!("synthetic task {k}"),
        domain_tags: Default::default(),
        est_tokens_per_round: 1000,
        complexity_hint: Complexity::Medium,
    }
}

fn instantiate(bindings: &[&AgentBinding], stream: u64) -> Result<Vec<Box<dyn Agent>>, CliError> {
    bindings
        .iter()
        .enumerate()
        .map(|(k, b)| Ok(b.instantiate(mix_seed(stream, k as u64))?))
        .collect()
}

/// Runs `cfg.replications` sessions with the pool's non-reserve agents as
/// the fixed team.
pub fn run_simulation(
    pool: &[AgentBinding],
    cfg: &SimulateConfig,
) -> Result<SimulationResult, CliError> {
    if cfg.replications == 0 {
        return Err(CliError::Config("replications must be >= 1".into()));
    }
    let team: Vec<&AgentBinding> = pool.iter().filter(|b| !b.reserve).collect();
    let reserves: Vec<&AgentBinding> = pool.iter().filter(|b| b.reserve).collect();
    if team.is_empty() {
        return Err(CliError::Config("pool has no non-reserve agents".into()));
    }
    let ids: Vec<AgentId> = team.iter().map(|b| b.profile.id.clone()).collect();
    let orch = OrchestratorConfig {
        timeout_s: cfg.timeout_s,
        ..Default::default()
    };
    let rt = runtime()?;
    let mut sessions = Vec::with_capacity(cfg.replications as usize);
    for r in 0..cfg.replications {
        let stream = mix_seed(cfg.seed, u64::from(r));
        let manifest = SessionManifest {
            session_id: format!("sim-{}-{r:05}", cfg.seed),
            agents: ids.clone(),
            t_opt: cfg.rounds,
            gamma_base: cfg.gamma_base,
            epsilon: cfg.epsilon,
            consensus_strategy: cfg.strategy,
            vote_budget: 100,
            seed: stream,
        };
        let agents = instantiate(&team, stream)?;
        let spare = instantiate(&reserves, mix_seed(stream, u64::MAX))?;
        let rec = rt.block_on(run_deliberation(
            &synthetic_task(r),
            &manifest,
            agents,
            spare,
            &orch,
            &mut ConstraintSource::None,
        ))?;
        sessions.push(rec);
    }
    Ok(summarize(&ids, cfg, sessions))
}

fn summarize(
    ids: &[AgentId],
    cfg: &SimulateConfig,
    sessions: Vec<SessionRecord>,
) -> SimulationResult {
    let n = sessions.len() as f64;
    let trajectory = (1..=cfg.rounds)
        .map(|t| {
            let correct = sessions
                .iter()
                .filter(|s| {
                    let k = (t as usize).min(s.rounds.len()) - 1;
                    s.rounds[k].winning_proposal().answer == CORRECT_ANSWER
                })
                .count() as f64;
            let p = correct / n;
            TrajectoryRow {
                round: t,
                accuracy: p,
                stderr: (p * (1.0 - p) / n).sqrt(),
                sessions: sessions.len() as u32,
            }
        })
        .collect();
    let final_accuracy = sessions
        .iter()
        .filter(|s| s.final_answer.proposal.answer == CORRECT_ANSWER)
        .count() as f64
        / n;

    let k = ids.len();
    let mut influence = vec![vec![0.0; k]; k];
    let mut totals: Vec<([f64; 3], u32)> = vec![([0.0; 3], 0); cfg.rounds as usize];
    for s in &sessions {
        let m = influence_matrix(&s.rounds, ids);
        for (acc, row) in influence.iter_mut().zip(&m) {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x / n;
            }
        }
        let timings: Vec<RoundTiming> = s.rounds.iter().map(RoundTiming::from).collect();
        for row in latency_report(&timings, 0.0) {
            let slot = &mut totals[row.round as usize - 1];
            slot.0[0] += row.gen_s;
            slot.0[1] += row.eval_s;
            slot.0[2] += row.total_s;
            slot.1 += 1;
        }
    }
    let mut cumulative = 0.0;
    let latency: Vec<LatencyRow> = totals
        .iter()
        .enumerate()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(t, &(sum, c))| {
            let c = f64::from(c);
            cumulative += sum[2] / c;
            LatencyRow {
                round: t as u32 + 1,
                gen_s: sum[0] / c,
                eval_s: sum[1] / c,
                total_s: sum[2] / c,
                cumulative_s: cumulative,
            }
        })
        .collect();
    let influence_scores = (0..k)
        .map(|i| (0..k).filter(|&j| j != i).map(|j| influence[j][i]).sum())
        .collect();
    let report = InfluenceReport {
        session_id: format!("sim-{}", cfg.seed),
        agents: ids.to_vec(),
        influence,
        influence_scores,
        win_rates: win_rate_matrix(&sessions),
        latency,
        rounds: sessions.iter().map(|s| s.rounds_run()).max().unwrap_or(0),
        halt_reason: None,
    };
    SimulationResult {
        trajectory,
        final_accuracy,
        report,
        sessions,
    }
}

pub const TRAJECTORY_CSV: &str = "trajectory.csv";

/// Runs the batch and writes the trajectory and telemetry into `out`.
pub fn cmd_simulate(
    pool: &[AgentBinding],
    cfg: &SimulateConfig,
    out: &Path,
) -> Result<(SimulationResult, Vec<PathBuf>), CliError> {
    let res = run_simulation(pool, cfg)?;
    ensure_dir(out)?;
    let path = out.join(TRAJECTORY_CSV);
    telemetry::write_rows(
        &path,
        &["round", "accuracy", "stderr", "sessions"],
        &res.trajectory,
    )?;
    let mut written = vec![path];
    written.extend(telemetry::export(&res.report, out, ExportFormat::Csv)?);
    written.extend(telemetry::export(&res.report, out, ExportFormat::Json)?);
    Ok((res, written))
}

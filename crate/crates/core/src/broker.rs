//! Team composition under an SLA, and feedback into agent priors.
//!
//! The objective for a team `A` run for `t` rounds is
//! `utility(A, t) - elasticity * cost(A, t)`, where utility comes from
//! [`crate::thermo`] with the team's best generator and mean verifier,
//! scaled by how well the team's domain tags cover the task.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{HaltReason, DEFAULT_EPSILON};
use crate::core_types::{AgentId, AgentProfile, ConsensusStrategy, SessionManifest, Sla};
use crate::telemetry::InfluenceReport;
use crate::thermo::{self, condorcet_gate, ThermoParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Low,
    #[default]
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub description: String,
    #[serde(default)]
    pub domain_tags: BTreeSet<String>,
    pub est_tokens_per_round: u64,
    #[serde(default)]
    pub complexity_hint: Complexity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrokerConfig {
    pub session_id: String,
    pub overhead_net_s: f64,
    pub max_rounds: u32,
    /// Efficiency used for predicted utility.
    pub efficiency: f64,
    /// Fatigue used for predicted utility.
    pub fatigue: f64,
    pub gamma_base: f64,
    pub epsilon: f64,
    pub strategy: ConsensusStrategy,
    pub vote_budget: u32,
    pub seed: u64,
    /// Smallest team considered; peer scoring needs at least two.
    pub min_team: usize,
    /// Pools up to this size are searched exhaustively.
    pub exhaustive_limit: usize,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            session_id: "session".into(),
            overhead_net_s: 2.0,
            max_rounds: 8,
            efficiency: 4.31,
            fatigue: 0.0029,
            gamma_base: 0.8,
            epsilon: DEFAULT_EPSILON,
            strategy: ConsensusStrategy::HistoryMax,
            vote_budget: 100,
            seed: 0,
            min_team: 2,
            exhaustive_limit: 12,
        }
    }
}

/// Counts of candidate (team, rounds) pairs rejected by each constraint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub candidates: u64,
    pub latency: u64,
    pub cost: u64,
    pub quality: u64,
    pub condorcet: u64,
}

impl Diagnostics {
    fn describe(&self, sla: &Sla) -> String {
        let mut parts = Vec::new();
        if self.cost > 0 {
            parts.push(format!(
                "cost <= {} rejected {}/{}",
                sla.max_cost, self.cost, self.candidates
            ));
        }
        if self.latency > 0 {
            parts.push(format!(
                "latency <= {}s rejected {}/{}",
                sla.max_latency_s, self.latency, self.candidates
            ));
        }
        if self.quality > 0 {
            parts.push(format!(
                "mean quality >= {} rejected {}/{}",
                sla.min_quality, self.quality, self.candidates
            ));
        }
        parts.join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BrokerError {
    #[error("agent pool is empty")]
    EmptyPool,
    #[error("invalid agent profile: {0}")]
    InvalidProfile(String),
    #[error("task must have est_tokens_per_round > 0")]
    InvalidTask,
    #[error("rounds must be >= 1")]
    InvalidRounds,
    #[error("no team satisfies the SLA: {message}")]
    Infeasible {
        message: String,
        diagnostics: Diagnostics,
    },
    #[error("every SLA-feasible team has mean verifier precision <= 0.5 (best {best_mean_pv:.3})")]
    CondorcetFail { best_mean_pv: f64 },
    #[error("telemetry session {report} does not match manifest session {manifest}")]
    SessionMismatch { manifest: String, report: String },
    #[error("session log: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSolution {
    pub agents: Vec<AgentId>,
    pub t: u32,
    pub predicted_utility: f64,
    pub predicted_cost: f64,
    pub predicted_latency_s: f64,
    pub objective: f64,
}

/// Sum of `price * tokens * t` over the team.
pub fn estimate_cost(
    agents: &[AgentProfile],
    t: u32,
    task: &TaskProfile,
) -> Result<f64, BrokerError> {
    if t == 0 {
        return Err(BrokerError::InvalidRounds);
    }
    Ok(agents
        .iter()
        .map(|a| a.price_per_token * task.est_tokens_per_round as f64 * f64::from(t))
        .sum())
}

/// `t * (slowest mean latency + overhead)`; zero for an empty team.
pub fn estimate_latency(
    agents: &[AgentProfile],
    t: u32,
    overhead_net_s: f64,
) -> Result<f64, BrokerError> {
    if t == 0 {
        return Err(BrokerError::InvalidRounds);
    }
    if agents.is_empty() {
        return Ok(0.0);
    }
    let slowest = agents
        .iter()
        .map(|a| a.mean_latency_s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(f64::from(t) * (slowest + overhead_net_s))
}

/// Fraction of task tags covered by the team, mapped to `[0.5, 1]`.
pub fn domain_factor(agents: &[&AgentProfile], task: &TaskProfile) -> f64 {
    if task.domain_tags.is_empty() {
        return 1.0;
    }
    let covered = task
        .domain_tags
        .iter()
        .filter(|tag| agents.iter().any(|a| a.domain_tags.contains(*tag)))
        .count();
    0.5 + 0.5 * covered as f64 / task.domain_tags.len() as f64
}

/// Aggregates over one candidate team, computed once per team.
struct TeamStats {
    p_g: f64,
    p_v_mean: f64,
    quality_mean: f64,
    cost_per_round: f64,
    latency_per_round: f64,
    domain: f64,
}

impl TeamStats {
    fn of(team: &[&AgentProfile], task: &TaskProfile, cfg: &BrokerConfig) -> Self {
        let n = team.len() as f64;
        Self {
            p_g: team.iter().map(|a| a.gen_precision).fold(0.0, f64::max),
            p_v_mean: team.iter().map(|a| a.ver_precision).sum::<f64>() / n,
            quality_mean: team.iter().map(|a| a.quality_prior).sum::<f64>() / n,
            cost_per_round: team
                .iter()
                .map(|a| a.price_per_token * task.est_tokens_per_round as f64)
                .sum(),
            latency_per_round: team.iter().map(|a| a.mean_latency_s).fold(0.0, f64::max)
                + cfg.overhead_net_s,
            domain: domain_factor(team, task),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    members: Vec<usize>,
    t: u32,
    utility: f64,
    cost: f64,
    latency: f64,
    objective: f64,
}

impl Candidate {
    /// True when `self` should replace `other` as the incumbent.
    fn beats(&self, other: &Candidate) -> bool {
        use std::cmp::Ordering::*;
        let ord = self
            .objective
            .total_cmp(&other.objective)
            .then(other.cost.total_cmp(&self.cost))
            .then(other.members.len().cmp(&self.members.len()))
            .then(other.t.cmp(&self.t))
            .then(other.members.cmp(&self.members));
        ord == Greater
    }
}

struct Search<'a> {
    pool: &'a [AgentProfile],
    task: &'a TaskProfile,
    sla: &'a Sla,
    cfg: &'a BrokerConfig,
    store: Option<&'a PriorStore>,
    diag: Diagnostics,
    best_condorcet_pv: Option<f64>,
}

impl<'a> Search<'a> {
    /// Best feasible round count for one team, updating diagnostics.
    fn evaluate(&mut self, members: &[usize]) -> Option<Candidate> {
        let team: Vec<&AgentProfile> = members.iter().map(|&i| &self.pool[i]).collect();
        let stats = TeamStats::of(&team, self.task, self.cfg);
        let ids: Vec<AgentId> = team.iter().map(|a| a.id.clone()).collect();
        let cap = self
            .store
            .and_then(|s| s.round_cap(&ids))
            .unwrap_or(u32::MAX)
            .min(self.cfg.max_rounds);
        let params = ThermoParams::new(
            stats.p_g,
            stats.p_v_mean,
            self.cfg.efficiency,
            self.cfg.fatigue,
        );
        let mut best: Option<Candidate> = None;
        for t in 1..=cap {
            self.diag.candidates += 1;
            let tf = f64::from(t);
            let cost = stats.cost_per_round * tf;
            let latency = stats.latency_per_round * tf;
            let mut ok = true;
            if !(latency <= self.sla.max_latency_s) {
                self.diag.latency += 1;
                ok = false;
            }
            if !(cost <= self.sla.max_cost) {
                self.diag.cost += 1;
                ok = false;
            }
            if !(stats.quality_mean >= self.sla.min_quality) {
                self.diag.quality += 1;
                ok = false;
            }
            if !ok {
                continue;
            }
            if !condorcet_gate(stats.p_v_mean) {
                self.diag.condorcet += 1;
                let b = self.best_condorcet_pv.get_or_insert(stats.p_v_mean);
                *b = b.max(stats.p_v_mean);
                continue;
            }
            let utility = thermo::utility(t, &params).expect("t >= 1") * stats.domain;
            let objective = utility - self.sla.elasticity * cost;
            let c = Candidate {
                members: members.to_vec(),
                t,
                utility,
                cost,
                latency,
                objective,
            };
            if best.as_ref().is_none_or(|b| c.beats(b)) {
                best = Some(c);
            }
        }
        best
    }

    fn exhaustive(&mut self) -> Option<Candidate> {
        let n = self.pool.len();
        let mut best: Option<Candidate> = None;
        for mask in 1u64..(1u64 << n) {
            if (mask.count_ones() as usize) < self.cfg.min_team {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            if let Some(c) = self.evaluate(&members) {
                if best.as_ref().is_none_or(|b| c.beats(b)) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Greedy construction followed by add/drop/swap local search.
    fn heuristic(&mut self) -> Option<Candidate> {
        let n = self.pool.len();
        let min = self.cfg.min_team.max(1);
        let mut best: Option<Candidate> = None;
        let consider = |s: &mut Self, members: Vec<usize>, best: &mut Option<Candidate>| {
            if members.len() < min {
                return false;
            }
            match s.evaluate(&members) {
                Some(c) if best.as_ref().is_none_or(|b| c.beats(b)) => {
                    *best = Some(c);
                    true
                }
                _ => false,
            }
        };
        for i in 0..n {
            consider(self, vec![i], &mut best);
            for j in i + 1..n {
                consider(self, vec![i, j], &mut best);
            }
        }
        let mut incumbent = best.clone()?;
        loop {
            let mut moved = false;
            let current = incumbent.members.clone();
            let outside: Vec<usize> = (0..n).filter(|i| !current.contains(i)).collect();
            let mut neighbours: Vec<Vec<usize>> = Vec::new();
            for &o in &outside {
                let mut m = current.clone();
                m.push(o);
                m.sort_unstable();
                neighbours.push(m);
            }
            for k in 0..current.len() {
                let mut m = current.clone();
                m.remove(k);
                if !m.is_empty() {
                    neighbours.push(m);
                }
                for &o in &outside {
                    let mut m = current.clone();
                    m[k] = o;
                    m.sort_unstable();
                    neighbours.push(m);
                }
            }
            for m in neighbours {
                if consider(self, m, &mut best) {
                    incumbent = best.clone().expect("just set");
                    moved = true;
                    break;
                }
            }
            if !moved {
                return Some(incumbent);
            }
        }
    }
}

/// Picks the team and round budget maximizing the objective under the SLA.
pub fn compose_session(
    pool: &[AgentProfile],
    task: &TaskProfile,
    sla: &Sla,
    cfg: &BrokerConfig,
    store: Option<&PriorStore>,
) -> Result<(SessionManifest, CompositionSolution), BrokerError> {
    if pool.is_empty() {
        return Err(BrokerError::EmptyPool);
    }
    if task.est_tokens_per_round == 0 {
        return Err(BrokerError::InvalidTask);
    }
    for a in pool {
        a.validate()
            .map_err(|e| BrokerError::InvalidProfile(e.to_string()))?;
    }
    let mut search = Search {
        pool,
        task,
        sla,
        cfg,
        store,
        diag: Diagnostics::default(),
        best_condorcet_pv: None,
    };
    let found = if pool.len() <= cfg.exhaustive_limit.min(63) {
        search.exhaustive()
    } else {
        search.heuristic()
    };
    let Some(best) = found else {
        if let Some(best_mean_pv) = search.best_condorcet_pv {
            return Err(BrokerError::CondorcetFail { best_mean_pv });
        }
        return Err(BrokerError::Infeasible {
            message: search.diag.describe(sla),
            diagnostics: search.diag,
        });
    };
    let agents: Vec<AgentId> = best.members.iter().map(|&i| pool[i].id.clone()).collect();
    let manifest = SessionManifest {
        session_id: cfg.session_id.clone(),
        agents: agents.clone(),
        t_opt: best.t,
        gamma_base: cfg.gamma_base,
        epsilon: cfg.epsilon,
        consensus_strategy: cfg.strategy,
        vote_budget: cfg.vote_budget,
        seed: cfg.seed,
    };
    Ok((
        manifest,
        CompositionSolution {
            agents,
            t: best.t,
            predicted_utility: best.utility,
            predicted_cost: best.cost,
            predicted_latency_s: best.latency,
            objective: best.objective,
        },
    ))
}

/// Re-checks a solution against every SLA predicate.
pub fn satisfies_sla(
    pool: &[AgentProfile],
    sol: &CompositionSolution,
    task: &TaskProfile,
    sla: &Sla,
    overhead_net_s: f64,
) -> bool {
    let team: Vec<AgentProfile> = pool
        .iter()
        .filter(|a| sol.agents.contains(&a.id))
        .cloned()
        .collect();
    if team.is_empty() || team.len() != sol.agents.len() {
        return false;
    }
    let n = team.len() as f64;
    let cost = estimate_cost(&team, sol.t, task).unwrap_or(f64::INFINITY);
    let latency = estimate_latency(&team, sol.t, overhead_net_s).unwrap_or(f64::INFINITY);
    let quality = team.iter().map(|a| a.quality_prior).sum::<f64>() / n;
    let p_v = team.iter().map(|a| a.ver_precision).sum::<f64>() / n;
    cost <= sla.max_cost
        && latency <= sla.max_latency_s
        && quality >= sla.min_quality
        && condorcet_gate(p_v)
}

pub const DEFAULT_EMA_WEIGHT: f64 = 0.3;
/// Consecutive converged sessions needed before the round cap applies.
pub const CAP_STREAK: usize = 3;

/// Between-session memory: convergence history per ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorStore {
    pub ema_weight: f64,
    /// Keyed by sorted, comma-joined agent ids. `None` marks a session
    /// that did not converge.
    pub convergence: BTreeMap<String, Vec<Option<u32>>>,
}

impl Default for PriorStore {
    fn default() -> Self {
        Self {
            ema_weight: DEFAULT_EMA_WEIGHT,
            convergence: BTreeMap::new(),
        }
    }
}

pub fn ensemble_key(agents: &[AgentId]) -> String {
    let mut ids: Vec<&str> = agents.iter().map(AgentId::as_str).collect();
    ids.sort_unstable();
    ids.join(",")
}

impl PriorStore {
    /// Round limit learned from the last few sessions of this ensemble.
    pub fn round_cap(&self, agents: &[AgentId]) -> Option<u32> {
        let hist = self.convergence.get(&ensemble_key(agents))?;
        if hist.len() < CAP_STREAK {
            return None;
        }
        hist[hist.len() - CAP_STREAK..]
            .iter()
            .copied()
            .collect::<Option<Vec<u32>>>()?
            .into_iter()
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorUpdate {
    pub agent: AgentId,
    pub before: f64,
    pub after: f64,
    pub share: f64,
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub session_id: String,
    pub ensemble: String,
    pub rounds: u32,
    pub converged_at: Option<u32>,
    pub updates: Vec<PriorUpdate>,
}

/// Moves each team member's quality prior toward its observed influence
/// share and records the session's convergence round.
pub fn record_feedback(
    pool: &mut [AgentProfile],
    store: &mut PriorStore,
    manifest: &SessionManifest,
    report: &InfluenceReport,
) -> Result<FeedbackEvent, BrokerError> {
    if report.session_id != manifest.session_id {
        return Err(BrokerError::SessionMismatch {
            manifest: manifest.session_id.clone(),
            report: report.session_id.clone(),
        });
    }
    let key = ensemble_key(&manifest.agents);
    let mut event = FeedbackEvent {
        session_id: manifest.session_id.clone(),
        ensemble: key.clone(),
        rounds: report.rounds,
        converged_at: None,
        updates: Vec::new(),
    };
    // a solo session has no peer scores to learn from
    if report.rounds == 0 || report.agents.len() < 2 {
        return Ok(event);
    }
    let peers = report.agents.len().saturating_sub(1).max(1) as f64;
    let w = store.ema_weight.clamp(0.0, 1.0);
    for (id, &influence) in report.agents.iter().zip(&report.influence_scores) {
        if !manifest.agents.contains(id) {
            continue;
        }
        let Some(profile) = pool.iter_mut().find(|p| &p.id == id) else {
            continue;
        };
        let share = (influence / peers).clamp(0.0, 1.0);
        let before = profile.quality_prior;
        let after = ((1.0 - w) * before + w * share).clamp(0.0, 1.0);
        profile.quality_prior = after;
        event.updates.push(PriorUpdate {
            agent: id.clone(),
            before,
            after,
            share,
        });
    }
    event.converged_at =
        (report.halt_reason == Some(HaltReason::Converged)).then_some(report.rounds);
    store
        .convergence
        .entry(key)
        .or_default()
        .push(event.converged_at);
    Ok(event)
}

/// Appends one JSON line to the session log.
pub fn append_session_log(path: &Path, event: &FeedbackEvent) -> Result<(), BrokerError> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| BrokerError::Io(e.to_string()))?;
    let line = serde_json::to_string(event).map_err(|e| BrokerError::Io(e.to_string()))?;
    writeln!(f, "{line}").map_err(|e| BrokerError::Io(e.to_string()))
}

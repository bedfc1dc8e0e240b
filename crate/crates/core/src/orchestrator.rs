//! The synchronous round loop.
//!
//! Each round: inject pending constraints, fan out generation with a
//! per-agent timeout, wait for every proposal, shuffle and blind them,
//! fan out evaluation, wait again, then mask, aggregate, pick a winner,
//! commit state and decide whether to stop. Stalled agents are replaced
//! from the reserve list; without reserves the round continues with the
//! agents that answered.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use futures::future::join_all;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    Agent, AgentError, BlindedCandidate, BlindedVotes, ContextEntry, ContextPacket, Draft,
    Evaluation, Timed,
};
use crate::broker::TaskProfile;
use crate::consensus::{
    commit_state, convergence_delta, history_candidates, select_consensus, should_halt,
    ConsensusError, HaltReason, RoundOutcome, DEFAULT_ACTIVE_WINDOW, DEFAULT_RETENTION_THRESHOLD,
    DEFAULT_SCORE_TOLERANCE,
};
use crate::core_types::{
    validate_manifest, AgentId, BlindedId, ConsensusEntry, DeliberationState, ManifestError,
    Proposal, RoundRecord, SessionManifest, VoteMatrix,
};
use crate::thermo::decay_policy;
use crate::voting::{
    apply_diagonal_mask, controversy_score, normalize_score, quadratic_aggregate, qv_activate,
    RawVoteVector, MAX_RAW_SCORE,
};

/// Splitmix-style mixing of a base seed with a stream index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    /// Per-agent, per-phase timeout.
    pub timeout_s: f64,
    pub score_tolerance: f64,
    pub retention_threshold: f64,
    pub active_window: usize,
    /// Fixed network overhead added to each round's latency.
    pub overhead_net_s: f64,
    /// Abort once cumulative latency exceeds this.
    pub max_latency_s: Option<f64>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            timeout_s: 60.0,
            score_tolerance: DEFAULT_SCORE_TOLERANCE,
            retention_threshold: DEFAULT_RETENTION_THRESHOLD,
            active_window: DEFAULT_ACTIVE_WINDOW,
            overhead_net_s: 0.0,
            max_latency_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("invalid manifest: {0:?}")]
    InvalidManifest(Vec<ManifestError>),
    #[error("bound agents {bound:?} do not match manifest {manifest:?}")]
    ManifestMismatch {
        manifest: Vec<AgentId>,
        bound: Vec<AgentId>,
    },
    #[error("round {round}: every agent failed in the {phase:?} phase")]
    AgentFailure { round: u32, phase: Phase },
    #[error("latency budget {limit_s}s exceeded after round {round} ({elapsed_s:.2}s)")]
    Timeout {
        round: u32,
        elapsed_s: f64,
        limit_s: f64,
    },
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    Generate,
    Evaluate,
    Commit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ConstraintInjected {
        text: String,
    },
    Requested {
        agent: AgentId,
    },
    Received {
        agent: AgentId,
        elapsed_s: f64,
    },
    Failed {
        agent: AgentId,
        error: AgentError,
    },
    HotSwap {
        stalled: AgentId,
        replacement: AgentId,
    },
    Dropped {
        agent: AgentId,
    },
    Note {
        text: String,
    },
    Committed {
        winner: BlindedId,
        score: f64,
        delta: f64,
        gamma: f64,
    },
    Halted {
        reason: HaltReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub round: u32,
    pub phase: Phase,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub manifest: SessionManifest,
    pub rounds: Vec<RoundRecord>,
    pub outcomes: Vec<RoundOutcome>,
    pub final_answer: ConsensusEntry,
    pub halt_reason: HaltReason,
    pub events: Vec<Event>,
}

impl SessionRecord {
    pub fn rounds_run(&self) -> u32 {
        self.rounds.len() as u32
    }
}

/// Source of user constraints injected between rounds.
#[derive(Debug, Clone, Default)]
pub enum ConstraintSource {
    #[default]
    None,
    /// Texts keyed by the round they are injected before.
    Scripted(BTreeMap<u32, Vec<String>>),
    /// A text file re-read before every round; each new line is a constraint.
    File { path: PathBuf, consumed: usize },
}

impl ConstraintSource {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self::File {
            path: path.into(),
            consumed: 0,
        }
    }

    fn poll(&mut self, round: u32) -> Vec<String> {
        match self {
            Self::None => Vec::new(),
            Self::Scripted(m) => m.remove(&round).unwrap_or_default(),
            Self::File { path, consumed } => {
                let Ok(text) = std::fs::read_to_string(path) else {
                    return Vec::new();
                };
                let lines: Vec<String> = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_owned)
                    .collect();
                let fresh = lines
                    .get(*consumed..)
                    .map(<[String]>::to_vec)
                    .unwrap_or_default();
                *consumed = lines.len().max(*consumed);
                fresh
            }
        }
    }
}

/// Secret mapping from blinded ids back to slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthorMap {
    /// `slot_of[k]` is the slot whose proposal sits at shuffled position `k`.
    pub slot_of: Vec<usize>,
    /// Blinded id per slot.
    pub ids: Vec<BlindedId>,
}

impl AuthorMap {
    pub fn slot(&self, id: &BlindedId) -> Option<usize> {
        self.ids.iter().position(|b| b == id)
    }
}

/// Shuffles candidates with a seed-determined uniform permutation and
/// assigns fresh random tokens.
pub fn anonymize(candidates: &[Proposal], seed: u64) -> (Vec<BlindedCandidate>, AuthorMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = candidates.len();
    let mut ids: Vec<BlindedId> = Vec::with_capacity(n);
    while ids.len() < n {
        let tok = BlindedId(format!("c-{:08x}", rng.random::<u32>()));
        if !ids.contains(&tok) {
            ids.push(tok);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let blinded = order
        .iter()
        .map(|&slot| BlindedCandidate {
            blinded_id: ids[slot].clone(),
            reasoning: candidates[slot].reasoning.clone(),
            answer: candidates[slot].answer.clone(),
        })
        .collect();
    (
        blinded,
        AuthorMap {
            slot_of: order,
            ids,
        },
    )
}

/// A live agent bound to a seat in the session.
pub struct Seat {
    pub id: AgentId,
    pub agent: Box<dyn Agent>,
}

impl Seat {
    pub fn new(agent: Box<dyn Agent>) -> Self {
        Self {
            id: agent.id().clone(),
            agent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no reserve agents left")]
pub struct NoReserves;

/// Takes the next reserve for a stalled seat.
pub fn hot_swap(stalled: &AgentId, reserves: &mut Vec<Seat>) -> Result<Seat, NoReserves> {
    let _ = stalled;
    if reserves.is_empty() {
        Err(NoReserves)
    } else {
        Ok(reserves.remove(0))
    }
}

/// Context for one agent at the start of a round.
pub fn build_context(
    state: &DeliberationState,
    round: u32,
    feedback: &[String],
    prev: Option<&RoundRecord>,
    own_previous: Option<String>,
) -> ContextPacket {
    let entry = |e: &ConsensusEntry| ContextEntry {
        round: e.proposal.round,
        blinded_id: e.proposal.blinded_id.clone(),
        reasoning: e.proposal.reasoning.clone(),
        answer: e.proposal.answer.clone(),
        score: e.score,
    };
    let prev_votes = prev.map(|r| {
        let n = r.votes.rows();
        BlindedVotes {
            round: r.round,
            ids: r.proposals.iter().map(|p| p.blinded_id.clone()).collect(),
            entries: r.votes.entries.clone(),
            controversy: (0..n)
                .map(|k| controversy_score(&r.votes, k).unwrap_or(0.0))
                .collect(),
        }
    });
    ContextPacket {
        round,
        inputs: state.input_buffer().to_vec(),
        consensus: state.consensus.as_ref().map(entry),
        retained: state.retained.iter().map(entry).collect(),
        compressed: state.compressed.clone(),
        critiques: feedback.to_vec(),
        prev_votes,
        own_previous,
    }
}

struct Session<'a> {
    cfg: &'a OrchestratorConfig,
    seats: Vec<Seat>,
    reserves: Vec<Seat>,
    events: Vec<Event>,
}

impl Session<'_> {
    fn log(&mut self, round: u32, phase: Phase, kind: EventKind) {
        self.events.push(Event { round, phase, kind });
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.cfg.timeout_s.max(0.0))
    }

    /// Treats over-budget results, real or simulated, as stalls.
    fn check<T>(
        &self,
        r: Result<Result<Timed<T>, AgentError>, tokio::time::error::Elapsed>,
    ) -> Result<Timed<T>, AgentError> {
        match r {
            Err(_) => Err(AgentError::Timeout(self.cfg.timeout_s)),
            Ok(Ok(t)) if t.elapsed_s > self.cfg.timeout_s => Err(AgentError::Timeout(t.elapsed_s)),
            Ok(other) => other,
        }
    }

    /// Generation for the listed seats; `None` marks a seat dropped this round.
    async fn generate(
        &mut self,
        round: u32,
        contexts: &[ContextPacket],
    ) -> Vec<Option<Timed<Draft>>> {
        for k in 0..self.seats.len() {
            let agent = self.seats[k].id.clone();
            self.log(round, Phase::Generate, EventKind::Requested { agent });
        }
        let dur = self.timeout();
        let raw = join_all(
            self.seats
                .iter_mut()
                .zip(contexts)
                .map(|(s, c)| tokio::time::timeout(dur, s.agent.generate(c))),
        )
        .await;
        let mut out = Vec::with_capacity(raw.len());
        for (k, r) in raw.into_iter().enumerate() {
            let r = self.check(r);
            out.push(
                self.settle(round, Phase::Generate, k, r, &contexts[k], None)
                    .await,
            );
        }
        out
    }

    /// Records a result; on failure walks the reserve list.
    async fn settle<T: Clone>(
        &mut self,
        round: u32,
        phase: Phase,
        k: usize,
        mut result: Result<Timed<T>, AgentError>,
        ctx: &ContextPacket,
        candidates: Option<&[BlindedCandidate]>,
    ) -> Option<Timed<T>>
    where
        Self: Retry<T>,
    {
        let mut waited = 0.0;
        loop {
            match result {
                Ok(mut t) => {
                    for n in std::mem::take(&mut t.notes) {
                        self.log(round, phase, EventKind::Note { text: n });
                    }
                    t.elapsed_s += waited;
                    let agent = self.seats[k].id.clone();
                    self.log(
                        round,
                        phase,
                        EventKind::Received {
                            agent,
                            elapsed_s: t.elapsed_s,
                        },
                    );
                    return Some(t);
                }
                Err(error) => {
                    if matches!(error, AgentError::Timeout(_)) {
                        waited += self.cfg.timeout_s;
                    }
                    let stalled = self.seats[k].id.clone();
                    self.log(
                        round,
                        phase,
                        EventKind::Failed {
                            agent: stalled.clone(),
                            error,
                        },
                    );
                    match hot_swap(&stalled, &mut self.reserves) {
                        Ok(seat) => {
                            self.log(
                                round,
                                phase,
                                EventKind::HotSwap {
                                    stalled,
                                    replacement: seat.id.clone(),
                                },
                            );
                            self.seats[k] = seat;
                            self.log(
                                round,
                                phase,
                                EventKind::Requested {
                                    agent: self.seats[k].id.clone(),
                                },
                            );
                            result = self.retry(k, ctx, candidates).await;
                        }
                        Err(NoReserves) => {
                            self.log(round, phase, EventKind::Dropped { agent: stalled });
                            return None;
                        }
                    }
                }
            }
        }
    }
}

/// Re-issues a phase request for one seat after a swap.
#[async_trait::async_trait]
trait Retry<T> {
    async fn retry(
        &mut self,
        k: usize,
        ctx: &ContextPacket,
        candidates: Option<&[BlindedCandidate]>,
    ) -> Result<Timed<T>, AgentError>;
}

#[async_trait::async_trait]
impl Retry<Draft> for Session<'_> {
    async fn retry(
        &mut self,
        k: usize,
        ctx: &ContextPacket,
        _: Option<&[BlindedCandidate]>,
    ) -> Result<Timed<Draft>, AgentError> {
        let dur = self.timeout();
        let r = tokio::time::timeout(dur, self.seats[k].agent.generate(ctx)).await;
        self.check(r)
    }
}

#[async_trait::async_trait]
impl Retry<Vec<Evaluation>> for Session<'_> {
    async fn retry(
        &mut self,
        k: usize,
        ctx: &ContextPacket,
        candidates: Option<&[BlindedCandidate]>,
    ) -> Result<Timed<Vec<Evaluation>>, AgentError> {
        let dur = self.timeout();
        let c = candidates.unwrap_or(&[]);
        let r = tokio::time::timeout(dur, self.seats[k].agent.evaluate(c, ctx)).await;
        self.check(r)
    }
}

/// Runs one session to completion.
pub async fn run_deliberation(
    task: &TaskProfile,
    manifest: &SessionManifest,
    agents: Vec<Box<dyn Agent>>,
    reserves: Vec<Box<dyn Agent>>,
    cfg: &OrchestratorConfig,
    constraints: &mut ConstraintSource,
) -> Result<SessionRecord, OrchestratorError> {
    let manifest =
        validate_manifest(manifest.clone()).map_err(OrchestratorError::InvalidManifest)?;
    let bound: Vec<AgentId> = agents.iter().map(|a| a.id().clone()).collect();
    if bound != manifest.agents {
        return Err(OrchestratorError::ManifestMismatch {
            manifest: manifest.agents.clone(),
            bound,
        });
    }
    let budget = f64::from(manifest.vote_budget);
    let mut session = Session {
        cfg,
        seats: agents.into_iter().map(Seat::new).collect(),
        reserves: reserves.into_iter().map(Seat::new).collect(),
        events: Vec::new(),
    };
    let mut state = DeliberationState::new(task.description.clone(), cfg.active_window);
    let mut outcomes: Vec<RoundOutcome> = Vec::new();
    let mut cumulative = 0.0;
    let mut halt = HaltReason::BudgetExhausted;

    for t in 1..=manifest.t_opt {
        for text in constraints.poll(t) {
            session.log(
                t,
                Phase::Setup,
                EventKind::ConstraintInjected { text: text.clone() },
            );
            state.push_constraint(text);
        }

        // Generation.
        let prev = state.last_round().cloned();
        let contexts: Vec<ContextPacket> = session
            .seats
            .iter()
            .map(|seat| {
                let (feedback, own) = match prev
                    .as_ref()
                    .and_then(|r| r.slot_of(&seat.id).map(|i| (r, i)))
                {
                    Some((r, i)) => (
                        r.critiques
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .map(|(_, row)| row[i].clone())
                            .collect(),
                        Some(r.proposals[i].answer.clone()),
                    ),
                    None => (Vec::new(), None),
                };
                build_context(&state, t, &feedback, prev.as_ref(), own)
            })
            .collect();
        let drafts = session.generate(t, &contexts).await;
        let active: Vec<usize> = (0..drafts.len()).filter(|&k| drafts[k].is_some()).collect();
        if active.is_empty() {
            return Err(OrchestratorError::AgentFailure {
                round: t,
                phase: Phase::Generate,
            });
        }

        let authors: Vec<AgentId> = active
            .iter()
            .map(|&k| session.seats[k].id.clone())
            .collect();
        let mut proposals: Vec<Proposal> = active
            .iter()
            .zip(&authors)
            .map(|(&k, a)| {
                let d = &drafts[k].as_ref().expect("active").value;
                Proposal {
                    round: t,
                    author: a.clone(),
                    blinded_id: BlindedId(String::new()),
                    reasoning: d.reasoning.clone(),
                    answer: d.answer.clone(),
                }
            })
            .collect();
        let gen_s_all: Vec<f64> = active
            .iter()
            .map(|&k| drafts[k].as_ref().expect("active").elapsed_s)
            .collect();
        let (blinded, map) = anonymize(&proposals, mix_seed(manifest.seed, u64::from(t)));
        for (p, id) in proposals.iter_mut().zip(&map.ids) {
            p.blinded_id = id.clone();
        }

        // Evaluation: barrier passed, all proposals are in.
        for &k in &active {
            let agent = session.seats[k].id.clone();
            session.log(t, Phase::Evaluate, EventKind::Requested { agent });
        }
        let dur = session.timeout();
        let raw = {
            let ctxs = &contexts;
            let blinded = &blinded;
            let futs = session
                .seats
                .iter_mut()
                .enumerate()
                .filter(|(k, _)| active.contains(k))
                .map(|(k, s)| tokio::time::timeout(dur, s.agent.evaluate(blinded, &ctxs[k])));
            join_all(futs).await
        };
        let mut evals: Vec<Option<Timed<Vec<Evaluation>>>> = Vec::with_capacity(active.len());
        for (pos, r) in raw.into_iter().enumerate() {
            let k = active[pos];
            let r = session.check(r);
            let settled = session
                .settle(t, Phase::Evaluate, k, r, &contexts[k], Some(&blinded))
                .await;
            evals.push(settled);
        }
        // Evaluators that could not be replaced lose their row and column.
        let keep: Vec<usize> = (0..active.len()).filter(|&p| evals[p].is_some()).collect();
        if keep.is_empty() {
            return Err(OrchestratorError::AgentFailure {
                round: t,
                phase: Phase::Evaluate,
            });
        }
        let n = keep.len();
        let participants: Vec<AgentId> = keep
            .iter()
            .map(|&p| session.seats[active[p]].id.clone())
            .collect();
        let proposals: Vec<Proposal> = keep.iter().map(|&p| proposals[p].clone()).collect();
        let gen_s: Vec<f64> = keep.iter().map(|&p| gen_s_all[p]).collect();
        let mut raw_scores = vec![vec![0.0; n]; n];
        let mut critiques = vec![vec![String::new(); n]; n];
        let mut eval_s = Vec::with_capacity(n);
        for (j, &p) in keep.iter().enumerate() {
            let timed = evals[p].as_ref().expect("kept");
            eval_s.push(timed.elapsed_s);
            for e in &timed.value {
                let Some(slot) = map.slot(&e.target) else {
                    continue;
                };
                let Some(i) = keep.iter().position(|&q| q == slot) else {
                    continue;
                };
                let s = if e.score.is_finite() {
                    e.score.clamp(0.0, MAX_RAW_SCORE)
                } else {
                    0.0
                };
                if s != e.score {
                    session.log(
                        t,
                        Phase::Evaluate,
                        EventKind::Note {
                            text: format!(
                                "score {} from {} clamped to {s}",
                                e.score, participants[j]
                            ),
                        },
                    );
                }
                raw_scores[j][i] = s;
                critiques[j][i] = e.critique.clone();
            }
        }

        // Aggregation.
        let normalized: Vec<Vec<f64>> = raw_scores
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&x| normalize_score(x).expect("clamped"))
                    .collect()
            })
            .collect();
        let votes = apply_diagonal_mask(&VoteMatrix::new(t, normalized)).expect("square");
        let scores = quadratic_aggregate(&votes).expect("square");
        let peers = (n.saturating_sub(1)).max(1) as f64;
        let confidence: Vec<f64> = scores
            .iter()
            .map(|s| if n > 1 { s / peers } else { 0.0 })
            .collect();
        let activations: Vec<Vec<f64>> = raw_scores
            .iter()
            .map(|row| qv_activate(&RawVoteVector::new(row.clone(), budget)).expect("valid row"))
            .collect();
        let qv_confidence: Vec<f64> = (0..n)
            .map(|i| {
                if n > 1 {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| activations[j][i])
                        .sum::<f64>()
                        / peers
                } else {
                    0.0
                }
            })
            .collect();
        let winner = (0..n)
            .max_by(|&a, &b| {
                scores[a]
                    .total_cmp(&scores[b])
                    .then(participants[b].cmp(&participants[a]))
            })
            .expect("n >= 1");

        let record = RoundRecord {
            round: t,
            participants,
            proposals,
            raw_scores,
            critiques,
            votes,
            scores,
            confidence,
            qv_confidence,
            winner,
            gen_s,
            eval_s,
        };
        let win_score = record.winning_score();
        let delta = match state.consensus.as_ref() {
            Some(prev) => convergence_delta(
                win_score,
                prev.score,
                prev.proposal.answer != record.winning_proposal().answer,
                cfg.score_tolerance,
            ),
            None => convergence_delta(win_score, 0.0, true, cfg.score_tolerance),
        };
        let gamma = decay_policy(t, manifest.t_opt, manifest.gamma_base);
        let round_latency = record.gen_s.iter().copied().fold(0.0, f64::max)
            + record.eval_s.iter().copied().fold(0.0, f64::max)
            + cfg.overhead_net_s;
        cumulative += round_latency;
        outcomes.push(RoundOutcome {
            round: t,
            winner: record.winning_proposal().clone(),
            winner_score: win_score,
            delta_magnitude: delta,
            gamma_t: gamma,
        });
        session.log(
            t,
            Phase::Commit,
            EventKind::Committed {
                winner: record.winning_proposal().blinded_id.clone(),
                score: win_score,
                delta,
                gamma,
            },
        );
        state = commit_state(state, record, gamma, cfg.retention_threshold);

        if let Some(limit) = cfg.max_latency_s {
            if cumulative > limit {
                return Err(OrchestratorError::Timeout {
                    round: t,
                    elapsed_s: cumulative,
                    limit_s: limit,
                });
            }
        }
        if let Some(reason) = should_halt(delta, manifest.epsilon, gamma, t, manifest.t_opt) {
            halt = reason;
            session.log(t, Phase::Commit, EventKind::Halted { reason });
            break;
        }
    }

    let final_answer = select_consensus(
        &history_candidates(&state.history),
        &manifest.consensus_strategy,
    )?;
    Ok(SessionRecord {
        session_id: manifest.session_id.clone(),
        manifest,
        rounds: state.history,
        outcomes,
        final_answer,
        halt_reason: halt,
        events: session.events,
    })
}

//! Shared domain types.
//!
//! Everything here is a plain value type that serializes to JSON. The
//! only mutable aggregate is [`DeliberationState`], and only the
//! orchestrator writes to it.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque agent identifier, unique within a session.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Per-round anonymous token standing in for a proposal's author.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlindedId(pub String);

impl fmt::Display for BlindedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("agent {id}: {field} = {value} is not a probability in [0, 1]")]
    NotAProbability {
        id: AgentId,
        field: &'static str,
        value: f64,
    },
    #[error("agent {id}: price_per_token must be >= 0, got {value}")]
    NegativePrice { id: AgentId, value: f64 },
    #[error("agent {id}: mean_latency_s must be > 0, got {value}")]
    NonPositiveLatency { id: AgentId, value: f64 },
}

/// Static descriptor of an expert in the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: AgentId,
    #[serde(default)]
    pub domain_tags: BTreeSet<String>,
    pub price_per_token: f64,
    pub mean_latency_s: f64,
    pub quality_prior: f64,
    pub gen_precision: f64,
    pub ver_precision: f64,
    #[serde(default)]
    pub halluc_rate: f64,
}

impl AgentProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        for (field, value) in [
            ("quality_prior", self.quality_prior),
            ("gen_precision", self.gen_precision),
            ("ver_precision", self.ver_precision),
            ("halluc_rate", self.halluc_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ProfileError::NotAProbability {
                    id: self.id.clone(),
                    field,
                    value,
                });
            }
        }
        if !(self.price_per_token >= 0.0) {
            return Err(ProfileError::NegativePrice {
                id: self.id.clone(),
                value: self.price_per_token,
            });
        }
        if !(self.mean_latency_s > 0.0) {
            return Err(ProfileError::NonPositiveLatency {
                id: self.id.clone(),
                value: self.mean_latency_s,
            });
        }
        Ok(())
    }
}

/// Service level agreement bounding a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sla {
    pub max_latency_s: f64,
    pub max_cost: f64,
    pub min_quality: f64,
    /// Cost elasticity: weight of cost against utility in the broker objective.
    #[serde(default)]
    pub elasticity: f64,
}

impl Sla {
    pub fn loose() -> Self {
        Self {
            max_latency_s: f64::INFINITY,
            max_cost: f64::INFINITY,
            min_quality: 0.0,
            elasticity: 0.0,
        }
    }
}

/// One candidate answer submitted in a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub round: u32,
    pub author: AgentId,
    pub blinded_id: BlindedId,
    pub reasoning: String,
    pub answer: String,
}

/// Square score matrix for one round. Row `j` is the evaluator, column
/// `i` the proposer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteMatrix {
    pub round: u32,
    pub entries: Vec<Vec<f64>>,
}

impl VoteMatrix {
    pub fn new(round: u32, entries: Vec<Vec<f64>>) -> Self {
        Self { round, entries }
    }

    pub fn zeros(round: u32, n: usize) -> Self {
        Self::new(round, vec![vec![0.0; n]; n])
    }

    pub fn rows(&self) -> usize {
        self.entries.len()
    }

    pub fn is_square(&self) -> bool {
        let n = self.entries.len();
        self.entries.iter().all(|r| r.len() == n)
    }

    /// Score evaluator `j` gave proposer `i`.
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.entries[j][i]
    }

    pub fn column(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(move |row| row[i])
    }

    /// True when the diagonal is zero and every entry lies in `[0, 1]`.
    pub fn is_masked_unit(&self) -> bool {
        self.is_square()
            && self.entries.iter().enumerate().all(|(j, row)| {
                row.iter()
                    .enumerate()
                    .all(|(i, &v)| (0.0..=1.0).contains(&v) && (i != j || v == 0.0))
            })
    }
}

/// Final-answer weighting over the round history.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConsensusStrategy {
    /// Only the final round counts.
    #[serde(alias = "dictator")]
    Live,
    /// Best proposal of any round, unweighted.
    #[default]
    HistoryMax,
    /// Weight `1 + alpha * t`.
    Linear { alpha: f64 },
    /// Weight `gamma_w ^ t`.
    Exponential { gamma_w: f64 },
}

/// Alias used where the strategy is viewed as a weighting kernel.
pub type TemporalKernel = ConsensusStrategy;

impl ConsensusStrategy {
    /// Weight of a proposal from round `t` when the session ended at `last`.
    pub fn weight(&self, t: u32, last: u32) -> f64 {
        match *self {
            Self::Live => {
                if t == last {
                    1.0
                } else {
                    0.0
                }
            }
            Self::HistoryMax => 1.0,
            Self::Linear { alpha } => 1.0 + alpha * f64::from(t),
            Self::Exponential { gamma_w } => gamma_w.powf(f64::from(t)),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Self::Live | Self::HistoryMax => true,
            Self::Linear { alpha } => alpha >= 0.0 && alpha.is_finite(),
            Self::Exponential { gamma_w } => gamma_w > 0.0 && gamma_w.is_finite(),
        }
    }
}

/// Broker output describing one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub agents: Vec<AgentId>,
    pub t_opt: u32,
    pub gamma_base: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub consensus_strategy: ConsensusStrategy,
    pub vote_budget: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("team is empty")]
    EmptyTeam,
    #[error("{0} must be positive")]
    NonPositiveBudget(&'static str),
    #[error("gamma_base {0} outside [0, 1]")]
    GammaOutOfRange(f64),
    #[error("epsilon {0} must be >= 0")]
    NegativeEpsilon(f64),
    #[error("agent {0} listed more than once")]
    DuplicateAgent(AgentId),
    #[error("consensus strategy parameters invalid: {0:?}")]
    InvalidKernel(ConsensusStrategy),
}

/// Returns the manifest unchanged when every invariant holds, otherwise
/// every violation found.
pub fn validate_manifest(m: SessionManifest) -> Result<SessionManifest, Vec<ManifestError>> {
    let mut errs = Vec::new();
    if m.agents.is_empty() {
        errs.push(ManifestError::EmptyTeam);
    }
    let mut seen = BTreeSet::new();
    for a in &m.agents {
        if !seen.insert(a) {
            errs.push(ManifestError::DuplicateAgent(a.clone()));
        }
    }
    if m.t_opt == 0 {
        errs.push(ManifestError::NonPositiveBudget("t_opt"));
    }
    if m.vote_budget == 0 {
        errs.push(ManifestError::NonPositiveBudget("vote_budget"));
    }
    if !(0.0..=1.0).contains(&m.gamma_base) {
        errs.push(ManifestError::GammaOutOfRange(m.gamma_base));
    }
    if !(m.epsilon >= 0.0) {
        errs.push(ManifestError::NegativeEpsilon(m.epsilon));
    }
    if !m.consensus_strategy.is_valid() {
        errs.push(ManifestError::InvalidKernel(m.consensus_strategy));
    }
    if errs.is_empty() {
        Ok(m)
    } else {
        Err(errs)
    }
}

/// Everything recorded about one completed round, in slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub participants: Vec<AgentId>,
    pub proposals: Vec<Proposal>,
    /// Raw 0-100 scores as submitted, row = evaluator slot.
    pub raw_scores: Vec<Vec<f64>>,
    /// Critique text, row = evaluator slot.
    pub critiques: Vec<Vec<String>>,
    /// Normalized and masked.
    pub votes: VoteMatrix,
    /// Quadratic aggregate per proposal.
    pub scores: Vec<f64>,
    /// Aggregate divided by the number of peers, in `[0, 1]`.
    pub confidence: Vec<f64>,
    /// Mean budget-clamped activation received from peers.
    pub qv_confidence: Vec<f64>,
    pub winner: usize,
    pub gen_s: Vec<f64>,
    pub eval_s: Vec<f64>,
}

impl RoundRecord {
    pub fn winning_proposal(&self) -> &Proposal {
        &self.proposals[self.winner]
    }

    pub fn winning_score(&self) -> f64 {
        self.confidence[self.winner]
    }

    pub fn slot_of(&self, id: &AgentId) -> Option<usize> {
        self.participants.iter().position(|p| p == id)
    }
}

/// A proposal together with the score it earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEntry {
    pub proposal: Proposal,
    pub score: f64,
}

/// Compressed stand-in for a round that left the active window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub round: u32,
    pub winner: BlindedId,
    pub score: f64,
    pub digest: String,
}

impl HistorySummary {
    pub fn of(entry: &ConsensusEntry) -> Self {
        Self {
            round: entry.proposal.round,
            winner: entry.proposal.blinded_id.clone(),
            score: entry.score,
            digest: digest(&entry.proposal.answer),
        }
    }
}

const DIGEST_CHARS: usize = 120;

/// First line of `text`, cut to a fixed width.
pub fn digest(text: &str) -> String {
    let line = text.lines().next().unwrap_or("").trim();
    if line.chars().count() <= DIGEST_CHARS {
        line.to_owned()
    } else {
        let mut s: String = line.chars().take(DIGEST_CHARS - 3).collect();
        s.push_str("...");
        s
    }
}

/// Recurrent session state carried between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliberationState {
    input_buffer: Vec<String>,
    pub consensus: Option<ConsensusEntry>,
    /// Earlier consensus entries kept verbatim.
    pub retained: Vec<ConsensusEntry>,
    /// Summaries of compressed rounds, ordered by round.
    pub compressed: Vec<HistorySummary>,
    pub history: Vec<RoundRecord>,
    pub active_window: usize,
}

impl DeliberationState {
    pub fn new(task: impl Into<String>, active_window: usize) -> Self {
        Self {
            input_buffer: vec![task.into()],
            consensus: None,
            retained: Vec::new(),
            compressed: Vec::new(),
            history: Vec::new(),
            active_window,
        }
    }

    pub fn input_buffer(&self) -> &[String] {
        &self.input_buffer
    }

    /// Appends a user constraint. The buffer never shrinks.
    pub fn push_constraint(&mut self, text: impl Into<String>) {
        self.input_buffer.push(text.into());
    }

    pub fn last_round(&self) -> Option<&RoundRecord> {
        self.history.last()
    }

    /// Rounds still held verbatim in the context window.
    pub fn active_rounds(&self) -> &[RoundRecord] {
        let Some(last) = self.history.last() else {
            return &[];
        };
        let cutoff = last.round.saturating_sub(self.active_window as u32);
        let start = self
            .history
            .iter()
            .position(|r| r.round >= cutoff)
            .unwrap_or(self.history.len());
        &self.history[start..]
    }

    /// Historical read channel: full record of any past round.
    pub fn read_round(&self, round: u32) -> Option<&RoundRecord> {
        self.history.iter().find(|r| r.round == round)
    }

    pub(crate) fn insert_summary(&mut self, s: HistorySummary) {
        match self.compressed.binary_search_by_key(&s.round, |x| x.round) {
            Ok(_) => {}
            Err(pos) => self.compressed.insert(pos, s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize, gamma: f64) -> SessionManifest {
        SessionManifest {
            session_id: "s".into(),
            agents: (0..n).map(|i| AgentId(format!("a{i}"))).collect(),
            t_opt: 7,
            gamma_base: gamma,
            epsilon: 0.02,
            consensus_strategy: ConsensusStrategy::HistoryMax,
            vote_budget: 100,
            seed: 1,
        }
    }

    #[test]
    fn valid_manifest_passes_unchanged() {
        let m = manifest(3, 0.8);
        assert_eq!(validate_manifest(m.clone()).unwrap(), m);
    }

    #[test]
    fn empty_team_rejected() {
        let errs = validate_manifest(manifest(0, 0.8)).unwrap_err();
        assert_eq!(errs, vec![ManifestError::EmptyTeam]);
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        let errs = validate_manifest(manifest(3, 1.5)).unwrap_err();
        assert_eq!(errs, vec![ManifestError::GammaOutOfRange(1.5)]);
    }

    #[test]
    fn all_violations_reported() {
        let mut m = manifest(0, -0.1);
        m.t_opt = 0;
        m.vote_budget = 0;
        let errs = validate_manifest(m).unwrap_err();
        assert_eq!(errs.len(), 4);
    }

    #[test]
    fn strategy_json_shape() {
        let s: ConsensusStrategy =
            serde_json::from_str(r#"{"kind":"linear","alpha":0.2}"#).unwrap();
        assert_eq!(s, ConsensusStrategy::Linear { alpha: 0.2 });
        let d: ConsensusStrategy = serde_json::from_str(r#"{"kind":"dictator"}"#).unwrap();
        assert_eq!(d, ConsensusStrategy::Live);
    }

    #[test]
    fn profile_validation() {
        let mut p = AgentProfile {
            id: "x".into(),
            domain_tags: BTreeSet::new(),
            price_per_token: 0.0,
            mean_latency_s: 1.0,
            quality_prior: 0.5,
            gen_precision: 0.6,
            ver_precision: 0.7,
            halluc_rate: 0.1,
        };
        assert!(p.validate().is_ok());
        p.ver_precision = 1.2;
        assert!(matches!(
            p.validate(),
            Err(ProfileError::NotAProbability {
                field: "ver_precision",
                ..
            })
        ));
        p.ver_precision = 0.7;
        p.mean_latency_s = 0.0;
        assert!(matches!(
            p.validate(),
            Err(ProfileError::NonPositiveLatency { .. })
        ));
    }

    #[test]
    fn input_buffer_is_append_only() {
        let mut s = DeliberationState::new("task", 2);
        let before = s.input_buffer().to_vec();
        s.push_constraint("no loops");
        assert_eq!(&s.input_buffer()[..before.len()], &before[..]);
        assert_eq!(s.input_buffer().len(), 2);
    }

    #[test]
    fn digest_takes_first_line() {
        assert_eq!(digest("  answer 42 \nmore"), "answer 42");
        let long = "x".repeat(300);
        assert_eq!(digest(&long).chars().count(), DIGEST_CHARS);
    }

    #[test]
    fn masked_unit_check() {
        let ok = VoteMatrix::new(1, vec![vec![0.0, 0.3], vec![1.0, 0.0]]);
        assert!(ok.is_masked_unit());
        let bad = VoteMatrix::new(1, vec![vec![0.1, 0.3], vec![1.0, 0.0]]);
        assert!(!bad.is_masked_unit());
    }
}

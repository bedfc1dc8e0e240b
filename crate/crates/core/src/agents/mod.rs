//! Agent backends.
//!
//! An agent turns a [`ContextPacket`] into a proposal and scores a set of
//! anonymous candidates. [`SimulatedAgent`] is a seeded stochastic model
//! used for all offline experiments; [`RemoteAgent`] talks to an
//! OpenAI-compatible chat-completions endpoint through tool calls.

mod remote;
mod sim;
pub mod wire;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_types::{AgentId, AgentProfile, BlindedId, HistorySummary};

pub use remote::{RemoteAgent, RemoteConfig};
pub use sim::{LatencyDist, SimParams, SimulatedAgent, CORRECT_ANSWER};
pub use wire::{ParseRoute, ToolInvocation};

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum AgentError {
    #[error("timed out after {0:.1}s")]
    Timeout(f64),
    #[error("no parsable tool call: {0}")]
    MalformedOutput(String),
    #[error("http error: {0}")]
    Http(String),
    #[error("agent unavailable: {0}")]
    Unavailable(String),
}

/// A proposal before the orchestrator stamps round, author and blinded id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub reasoning: String,
    pub answer: String,
}

/// What an evaluator sees of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindedCandidate {
    pub blinded_id: BlindedId,
    pub reasoning: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub target: BlindedId,
    /// Raw score in `[0, 100]`.
    pub score: f64,
    pub critique: String,
}

/// A result plus the time the agent spent producing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timed<T> {
    pub value: T,
    pub elapsed_s: f64,
    /// Diagnostic notes for the session log (parse route, clamping).
    #[serde(default)]
    pub notes: Vec<String>,
}

impl<T> Timed<T> {
    pub fn new(value: T, elapsed_s: f64) -> Self {
        Self {
            value,
            elapsed_s,
            notes: Vec::new(),
        }
    }
}

/// A consensus entry as shown to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub round: u32,
    pub blinded_id: BlindedId,
    pub reasoning: String,
    pub answer: String,
    pub score: f64,
}

/// Previous round's votes with blinded row and column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindedVotes {
    pub round: u32,
    pub ids: Vec<BlindedId>,
    pub entries: Vec<Vec<f64>>,
    /// Off-diagonal column variance per proposal.
    pub controversy: Vec<f64>,
}

/// Everything an agent is shown at the start of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPacket {
    pub round: u32,
    pub inputs: Vec<String>,
    pub consensus: Option<ContextEntry>,
    pub retained: Vec<ContextEntry>,
    pub compressed: Vec<HistorySummary>,
    /// Critiques this agent's last proposal received.
    pub critiques: Vec<String>,
    pub prev_votes: Option<BlindedVotes>,
    /// This agent's own previous answer, read-only.
    pub own_previous: Option<String>,
}

impl ContextPacket {
    /// Answers visible anywhere in the packet.
    pub fn answers_in_view(&self) -> Vec<&str> {
        self.consensus
            .iter()
            .chain(&self.retained)
            .map(|e| e.answer.as_str())
            .chain(self.own_previous.as_deref())
            .collect()
    }

    /// Plain-text rendering used as the user message for remote agents.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("Round {}.\n\nTask and constraints:\n", self.round));
        for (i, x) in self.inputs.iter().enumerate() {
            s.push_str(&format!("{}. {}\n", i + 1, x));
        }
        if let Some(c) = &self.consensus {
            s.push_str(&format!(
                "\nCurrent consensus ({} from round {}, score {:.2}):\n{}\nReasoning: {}\n",
                c.blinded_id, c.round, c.score, c.answer, c.reasoning
            ));
        }
        for r in &self.retained {
            s.push_str(&format!(
                "\nEarlier consensus ({} from round {}, score {:.2}):\n{}\n",
                r.blinded_id, r.round, r.score, r.answer
            ));
        }
        if !self.compressed.is_empty() {
            s.push_str("\nOlder rounds (summaries):\n");
            for h in &self.compressed {
                s.push_str(&format!(
                    "- round {} winner {} score {:.2}: {}\n",
                    h.round, h.winner, h.score, h.digest
                ));
            }
        }
        if let Some(own) = &self.own_previous {
            s.push_str(&format!("\nYour previous answer:\n{own}\n"));
        }
        if !self.critiques.is_empty() {
            s.push_str("\nCritiques of your previous proposal:\n");
            for c in &self.critiques {
                s.push_str(&format!("- {c}\n"));
            }
        }
        if let Some(v) = &self.prev_votes {
            s.push_str(&format!(
                "\nVotes from round {} (rows evaluate columns, scale 0-1):\n",
                v.round
            ));
            let header: Vec<String> = v.ids.iter().map(|b| b.0.clone()).collect();
            s.push_str(&format!("      {}\n", header.join(" ")));
            for (id, row) in v.ids.iter().zip(&v.entries) {
                let cells: Vec<String> = row.iter().map(|x| format!("{x:.2}")).collect();
                s.push_str(&format!("{} {}\n", id, cells.join(" ")));
            }
            let var: Vec<String> = v
                .ids
                .iter()
                .zip(&v.controversy)
                .map(|(id, x)| format!("{id}={x:.3}"))
                .collect();
            s.push_str(&format!(
                "Controversy (vote variance): {}\n",
                var.join(", ")
            ));
        }
        s
    }
}

#[async_trait]
pub trait Agent: Send {
    fn id(&self) -> &AgentId;

    async fn generate(&mut self, ctx: &ContextPacket) -> Result<Timed<Draft>, AgentError>;

    /// Scores every candidate, including the agent's own.
    async fn evaluate(
        &mut self,
        candidates: &[BlindedCandidate],
        ctx: &ContextPacket,
    ) -> Result<Timed<Vec<Evaluation>>, AgentError>;
}

/// Backend choice stored in a pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backend {
    Simulated(SimParams),
    Remote(RemoteConfig),
}

/// A pool entry: profile plus how to instantiate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBinding {
    #[serde(flatten)]
    pub profile: AgentProfile,
    pub backend: Backend,
    /// Held back for hot-swap instead of being offered to the broker.
    #[serde(default)]
    pub reserve: bool,
}

impl AgentBinding {
    /// Builds a live agent; `seed_offset` is mixed into simulated seeds.
    pub fn instantiate(&self, seed_offset: u64) -> Result<Box<dyn Agent>, AgentError> {
        match &self.backend {
            Backend::Simulated(p) => {
                let mut p = p.clone();
                p.seed = crate::orchestrator::mix_seed(p.seed, seed_offset);
                Ok(Box::new(SimulatedAgent::new(self.profile.id.clone(), p)))
            }
            Backend::Remote(cfg) => Ok(Box::new(RemoteAgent::new(
                self.profile.id.clone(),
                cfg.clone(),
            )?)),
        }
    }
}

//! Agent backed by an OpenAI-compatible chat-completions endpoint.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::wire::{self, ChatMessage, ChatRequest, ToolInvocation};
use super::{Agent, AgentError, BlindedCandidate, ContextPacket, Draft, Evaluation, Timed};
use crate::core_types::{AgentId, BlindedId};

const PROTOCOL_PROMPT: &str = "You are one member of a panel solving a task over several rounds. \
In the proposal phase, call submit_proposal with your reasoning and final answer. \
In the evaluation phase, call submit_evaluation once per candidate. \
Score strictly on the full 0-100 scale and check every step before giving credit. \
Candidates are anonymous; judge only the content. \
You may call update_scratchpad to keep private notes.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub persona: String,
    pub temperature: f64,
    pub presence_penalty: f64,
    pub max_tokens: u32,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub request_timeout_s: f64,
    /// Requests allowed per phase (scratchpad turns and retries).
    pub max_steps: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            persona: String::new(),
            temperature: 0.6,
            presence_penalty: 1.5,
            max_tokens: 16_000,
            api_key_env: None,
            request_timeout_s: 600.0,
            max_steps: 3,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.temperature >= 0.0) {
            return Err(AgentError::Unavailable(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if !(self.presence_penalty >= 0.0) {
            return Err(AgentError::Unavailable(format!(
                "presence_penalty {} must be >= 0",
                self.presence_penalty
            )));
        }
        Ok(())
    }
}

pub struct RemoteAgent {
    id: AgentId,
    cfg: RemoteConfig,
    client: reqwest::Client,
    api_key: Option<String>,
    scratchpad: Vec<String>,
}

impl RemoteAgent {
    pub fn new(id: AgentId, cfg: RemoteConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_s.max(0.001)))
            .build()
            .map_err(|e| AgentError::Http(e.to_string()))?;
        let api_key = cfg
            .api_key_env
            .as_deref()
            .and_then(|k| std::env::var(k).ok());
        Ok(Self {
            id,
            cfg,
            client,
            api_key,
            scratchpad: Vec::new(),
        })
    }

    pub fn scratchpad(&self) -> &[String] {
        &self.scratchpad
    }

    fn system_prompt(&self) -> String {
        if self.cfg.persona.is_empty() {
            PROTOCOL_PROMPT.to_owned()
        } else {
            format!("{}\n\n{}", self.cfg.persona, PROTOCOL_PROMPT)
        }
    }

    /// One request; returns the parsed invocations and the raw assistant
    /// message for the transcript.
    async fn call(
        &self,
        messages: &[ChatMessage],
        notes: &mut Vec<String>,
    ) -> Result<(Vec<ToolInvocation>, ChatMessage), AgentError> {
        let req = ChatRequest {
            model: self.cfg.model.clone(),
            messages: messages.to_vec(),
            tools: wire::tool_schemas(),
            tool_choice: "auto".into(),
            temperature: self.cfg.temperature,
            presence_penalty: self.cfg.presence_penalty,
            max_tokens: self.cfg.max_tokens,
        };
        let mut rb = self.client.post(&self.cfg.endpoint).json(&req);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().await.map_err(|e| {
            if e.is_timeout() {
                AgentError::Timeout(self.cfg.request_timeout_s)
            } else {
                AgentError::Http(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(AgentError::Http(format!("status {status}")));
        }
        let body: Value = resp
            .json()
            .await
            .map_err(|e| AgentError::MalformedOutput(format!("body is not JSON: {e}")))?;
        let (calls, route) = wire::parse_response(&body)?;
        notes.push(format!("{}: parsed via {:?}", self.id, route).to_lowercase());
        let message = body["choices"][0]["message"].clone();
        let message: ChatMessage =
            serde_json::from_value(message).unwrap_or_else(|_| ChatMessage::text("assistant", ""));
        Ok((calls, message))
    }

    fn store_scratchpad(&mut self, calls: &[ToolInvocation]) -> bool {
        let mut any = false;
        for c in calls {
            if let ToolInvocation::UpdateScratchpad { content, strategy } = c {
                self.scratchpad.push(if strategy.is_empty() {
                    content.clone()
                } else {
                    format!("[{strategy}] {content}")
                });
                any = true;
            }
        }
        any
    }
}

fn follow_up(assistant: ChatMessage, text: &str) -> Vec<ChatMessage> {
    let mut out = vec![assistant.clone()];
    match &assistant.tool_calls {
        Some(calls) if !calls.is_empty() => {
            for c in calls {
                out.push(ChatMessage {
                    role: "tool".into(),
                    content: Some(text.to_owned()),
                    tool_calls: None,
                    tool_call_id: Some(c.id.clone()),
                });
            }
        }
        _ => out.push(ChatMessage::text("user", text)),
    }
    out
}

#[async_trait]
impl Agent for RemoteAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    async fn generate(&mut self, ctx: &ContextPacket) -> Result<Timed<Draft>, AgentError> {
        let start = Instant::now();
        let mut notes = Vec::new();
        let mut messages = vec![
            ChatMessage::text("system", self.system_prompt()),
            ChatMessage::text(
                "user",
                format!(
                    "{}\nProposal phase: call submit_proposal with your reasoning and final answer.",
                    ctx.render()
                ),
            ),
        ];
        for _ in 0..self.cfg.max_steps.max(1) {
            let (calls, assistant) = self.call(&messages, &mut notes).await?;
            if let Some(ToolInvocation::SubmitProposal {
                reasoning,
                final_answer,
            }) = calls
                .iter()
                .find(|c| matches!(c, ToolInvocation::SubmitProposal { .. }))
            {
                let mut t = Timed::new(
                    Draft {
                        reasoning: reasoning.clone(),
                        answer: final_answer.clone(),
                    },
                    start.elapsed().as_secs_f64(),
                );
                t.notes = notes;
                return Ok(t);
            }
            self.store_scratchpad(&calls);
            messages.extend(follow_up(
                assistant,
                "Noted. Now call submit_proposal with your final answer.",
            ));
        }
        Err(AgentError::MalformedOutput(
            "no submit_proposal call within the step limit".into(),
        ))
    }

    async fn evaluate(
        &mut self,
        candidates: &[BlindedCandidate],
        ctx: &ContextPacket,
    ) -> Result<Timed<Vec<Evaluation>>, AgentError> {
        let start = Instant::now();
        let mut notes = Vec::new();
        let mut listing = String::new();
        for c in candidates {
            listing.push_str(&format!(
                "\n[{}]\nReasoning: {}\nAnswer: {}\n",
                c.blinded_id, c.reasoning, c.answer
            ));
        }
        let mut messages = vec![
            ChatMessage::text("system", self.system_prompt()),
            ChatMessage::text(
                "user",
                format!(
                    "{}\nEvaluation phase. Candidates:{}\nCall submit_evaluation once for each candidate id.",
                    ctx.render(),
                    listing
                ),
            ),
        ];
        let mut got: Vec<Option<Evaluation>> = vec![None; candidates.len()];
        for _ in 0..self.cfg.max_steps.max(1) {
            let (calls, assistant) = self.call(&messages, &mut notes).await?;
            self.store_scratchpad(&calls);
            for c in calls {
                if let ToolInvocation::SubmitEvaluation {
                    target_id,
                    score,
                    critique,
                } = c
                {
                    let Some(k) = candidates.iter().position(|x| x.blinded_id.0 == target_id)
                    else {
                        notes.push(format!("{}: unknown target {target_id}", self.id));
                        continue;
                    };
                    let clamped = if score.is_finite() {
                        score.clamp(0.0, 100.0)
                    } else {
                        0.0
                    };
                    if clamped != score {
                        notes.push(format!("{}: score {score} clamped to {clamped}", self.id));
                    }
                    got[k] = Some(Evaluation {
                        target: BlindedId(target_id),
                        score: clamped,
                        critique,
                    });
                }
            }
            let missing: Vec<&str> = candidates
                .iter()
                .zip(&got)
                .filter(|(_, g)| g.is_none())
                .map(|(c, _)| c.blinded_id.0.as_str())
                .collect();
            if missing.is_empty() {
                let mut t = Timed::new(
                    got.into_iter().map(|g| g.expect("all present")).collect(),
                    start.elapsed().as_secs_f64(),
                );
                t.notes = notes;
                return Ok(t);
            }
            messages.extend(follow_up(
                assistant,
                &format!("Still missing evaluations for: {}", missing.join(", ")),
            ));
        }
        Err(AgentError::MalformedOutput(
            "evaluations incomplete within the step limit".into(),
        ))
    }
}

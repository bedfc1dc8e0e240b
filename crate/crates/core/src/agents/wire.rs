//! Chat-completions wire types and tool-call parsing.
//!
//! Responses are read from the native `tool_calls` field first. Models
//! that write the call into the message text instead are handled by
//! scanning the content for JSON objects or `name(...)` pseudo-calls.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::AgentError;

pub const SUBMIT_PROPOSAL: &str = "submit_proposal";
pub const SUBMIT_EVALUATION: &str = "submit_evaluation";
pub const UPDATE_SCRATCHPAD: &str = "update_scratchpad";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "arguments", rename_all = "snake_case")]
pub enum ToolInvocation {
    SubmitProposal {
        reasoning: String,
        final_answer: String,
    },
    SubmitEvaluation {
        target_id: String,
        score: f64,
        critique: String,
    },
    UpdateScratchpad {
        content: String,
        strategy: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseRoute {
    Native,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn text(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_owned(),
            content: Some(content.into()),
            tool_calls: None,
            tool_call_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(default)]
    pub id: String,
    #[serde(rename = "type", default = "function_kind")]
    pub kind: String,
    pub function: FunctionCall,
}

fn function_kind() -> String {
    "function".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    /// JSON-encoded argument object.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub tools: Value,
    pub tool_choice: String,
    pub temperature: f64,
    pub presence_penalty: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Choice {
    pub message: ChatMessage,
}

/// JSON schemas for the three protocol tools.
pub fn tool_schemas() -> Value {
    let tool = |name: &str, desc: &str, props: Value, required: &[&str]| {
        json!({
            "type": "function",
            "function": {
                "name": name,
                "description": desc,
                "parameters": {
                    "type": "object",
                    "properties": props,
                    "required": required,
                }
            }
        })
    };
    json!([
        tool(
            SUBMIT_PROPOSAL,
            "Submit your proposed solution for this round.",
            json!({
                "reasoning": {"type": "string"},
                "final_answer": {"type": "string"}
            }),
            &["reasoning", "final_answer"],
        ),
        tool(
            SUBMIT_EVALUATION,
            "Score one candidate solution from 0 to 100.",
            json!({
                "target_id": {"type": "string"},
                "score": {"type": "number", "minimum": 0, "maximum": 100},
                "critique": {"type": "string"}
            }),
            &["target_id", "score", "critique"],
        ),
        tool(
            UPDATE_SCRATCHPAD,
            "Save private working notes.",
            json!({
                "content": {"type": "string"},
                "strategy": {"type": "string"}
            }),
            &["content"],
        ),
    ])
}

fn str_field(args: &Map<String, Value>, key: &str) -> Option<String> {
    match args.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn num_field(args: &Map<String, Value>, key: &str) -> Option<f64> {
    match args.get(key)? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Builds an invocation from a tool name and its argument object.
pub fn invocation_from(name: &str, args: &Map<String, Value>) -> Option<ToolInvocation> {
    match name {
        SUBMIT_PROPOSAL => Some(ToolInvocation::SubmitProposal {
            reasoning: str_field(args, "reasoning").unwrap_or_default(),
            final_answer: str_field(args, "final_answer")?,
        }),
        SUBMIT_EVALUATION => Some(ToolInvocation::SubmitEvaluation {
            target_id: str_field(args, "target_id")?,
            score: num_field(args, "score")?,
            critique: str_field(args, "critique").unwrap_or_default(),
        }),
        UPDATE_SCRATCHPAD => Some(ToolInvocation::UpdateScratchpad {
            content: str_field(args, "content")?,
            strategy: str_field(args, "strategy").unwrap_or_default(),
        }),
        _ => None,
    }
}

fn args_object(v: &Value) -> Option<Map<String, Value>> {
    match v {
        Value::Object(m) => Some(m.clone()),
        Value::String(s) => match serde_json::from_str(s) {
            Ok(Value::Object(m)) => Some(m),
            _ => None,
        },
        _ => None,
    }
}

/// Interprets one JSON object found in text.
fn invocation_from_object(obj: &Map<String, Value>) -> Option<ToolInvocation> {
    if let Some(Value::Object(f)) = obj.get("function") {
        return invocation_from_object(f);
    }
    let name = ["name", "tool", "tool_name", "function_name"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str));
    if let Some(name) = name {
        let args = ["arguments", "parameters", "args", "input"]
            .iter()
            .find_map(|k| obj.get(*k).and_then(args_object))?;
        return invocation_from(name, &args);
    }
    // Bare argument objects identified by their keys.
    if obj.contains_key("final_answer") {
        return invocation_from(SUBMIT_PROPOSAL, obj);
    }
    if obj.contains_key("target_id") && obj.contains_key("score") {
        return invocation_from(SUBMIT_EVALUATION, obj);
    }
    None
}

/// Every top-level JSON object embedded in `text`, in order.
fn embedded_objects(text: &str) -> Vec<(usize, usize, Map<String, Value>)> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => {
                let end = start + stream.byte_offset();
                out.push((start, end, m));
                i = end;
            }
            _ => i = start + 1,
        }
    }
    out
}

static PSEUDO_CALL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(submit_proposal|submit_evaluation|update_scratchpad)\s*\(").expect("valid regex")
});

static KWARG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(\w+)\s*=\s*(?:"((?:[^"\\]|\\.)*)"|'((?:[^'\\]|\\.)*)'|(-?\d+(?:\.\d+)?))"#)
        .expect("valid regex")
});

/// Keyword arguments up to the matching close paren.
fn parse_kwargs(body: &str) -> Option<Map<String, Value>> {
    let mut depth = 1usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut end = None;
    for (i, ch) in body.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q {
                quote = None;
            }
            continue;
        }
        match ch {
            '"' | '\'' => quote = Some(ch),
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    end = Some(i);
                    break;
                }
            }
            _ => {}
        }
    }
    let inner = &body[..end?];
    let mut m = Map::new();
    for c in KWARG.captures_iter(inner) {
        let key = c[1].to_owned();
        let val = if let Some(s) = c.get(2).or(c.get(3)) {
            Value::String(unescape(s.as_str()))
        } else {
            let n: f64 = c[4].parse().ok()?;
            json!(n)
        };
        m.insert(key, val);
    }
    (!m.is_empty()).then_some(m)
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some(other) => out.push(other),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Pattern scan over free text for tool invocations.
pub fn parse_text(text: &str) -> Vec<ToolInvocation> {
    let mut found: Vec<(usize, ToolInvocation)> = Vec::new();
    let objects = embedded_objects(text);
    let mut claimed: Vec<(usize, usize)> = Vec::new();

    for m in PSEUDO_CALL.captures_iter(text) {
        let name = m.get(1).expect("group").as_str();
        let call_start = m.get(0).expect("match").start();
        let after = m.get(0).expect("match").end();
        let rest = &text[after..];
        let trimmed = rest.trim_start();
        let obj_start = after + (rest.len() - trimmed.len());
        let inv = if trimmed.starts_with('{') {
            objects
                .iter()
                .find(|(s, _, _)| *s == obj_start)
                .and_then(|(s, e, obj)| {
                    claimed.push((*s, *e));
                    invocation_from(name, obj)
                })
        } else {
            parse_kwargs(rest).and_then(|args| invocation_from(name, &args))
        };
        if let Some(inv) = inv {
            found.push((call_start, inv));
        }
    }
    for (s, e, obj) in &objects {
        if claimed.iter().any(|(cs, ce)| cs == s && ce == e) {
            continue;
        }
        if let Some(inv) = invocation_from_object(obj) {
            found.push((*s, inv));
        }
    }
    found.sort_by_key(|(pos, _)| *pos);
    found.into_iter().map(|(_, inv)| inv).collect()
}

/// Invocations in a chat-completions response body.
pub fn parse_response(body: &Value) -> Result<(Vec<ToolInvocation>, ParseRoute), AgentError> {
    let resp: ChatResponse = serde_json::from_value(body.clone())
        .map_err(|e| AgentError::MalformedOutput(format!("not a chat completion: {e}")))?;
    let msg = &resp
        .choices
        .first()
        .ok_or_else(|| AgentError::MalformedOutput("no choices".into()))?
        .message;
    let native: Vec<ToolInvocation> = msg
        .tool_calls
        .iter()
        .flatten()
        .filter_map(|c| {
            let args = args_object(&Value::String(c.function.arguments.clone()))?;
            invocation_from(&c.function.name, &args)
        })
        .collect();
    if !native.is_empty() {
        return Ok((native, ParseRoute::Native));
    }
    let text = msg.content.as_deref().unwrap_or("");
    let heuristic = parse_text(text);
    if !heuristic.is_empty() {
        return Ok((heuristic, ParseRoute::Heuristic));
    }
    let snippet: String = text.chars().take(80).collect();
    Err(AgentError::MalformedOutput(snippet))
}

use super::{ClarificationSlot, Interpretation, ParseResult};
use crate::constraints::{library_docs, SemanticMap};
use std::time::Duration;

pub const ENV_ENDPOINT: &str = "SKETCHNAV_LLM_ENDPOINT";
pub const ENV_KEY: &str = "SKETCHNAV_LLM_KEY";
pub const ENV_MODEL: &str = "SKETCHNAV_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("language backend not configured: {0}")]
    NotConfigured(String),
    #[error("language backend unavailable: {0}")]
    Unavailable(String),
}

/// Sends one prompt, returns the raw reply text. Blocking.
pub trait LlmTransport: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// JSON-over-HTTP transport. The request body is
/// `{"model": ..., "prompt": ...}`; the reply may be an OpenAI-style
/// `choices[0].message.content`, a `text`/`content` field, or the bare
/// structured reply.
pub struct HttpTransport {
    endpoint: String,
    key: Option<String>,
    model: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, model: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpTransport { endpoint: endpoint.into(), key, model, agent }
    }

    pub fn from_env(timeout: Duration) -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| BackendError::NotConfigured(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(HttpTransport::new(endpoint, std::env::var(ENV_KEY).ok(), std::env::var(ENV_MODEL).ok(), timeout))
    }
}

impl LlmTransport for HttpTransport {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = serde_json::json!({ "model": self.model, "prompt": prompt });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(unwrap_envelope(&text))
    }
}

fn unwrap_envelope(text: &str) -> String {
    let Ok(v) = serde_json::from_str::<serde_json::Value>(text) else {
        return text.to_string();
    };
    if let Some(s) = v.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
        return s.to_string();
    }
    for key in ["text", "content", "output", "response"] {
        if let Some(s) = v.get(key).and_then(|c| c.as_str()) {
            return s.to_string();
        }
    }
    text.to_string()
}

const REPLY_SCHEMA: &str = r#"Reply with one JSON object and nothing else:
{"task": "PointToPoint" | "Following" | "Guiding" | null,
 "goal": "<fixture name>" | [x, y] | null,
 "vip": "<pedestrian id>" | null,
 "via": ["<fixture name>" | [x, y], ...],
 "constraints": [{"type": "virtual_obstacle" | "keep_out", "fixture": "<fixture name>", "r": <meters> | null}],
 "clarification": "<question for the user>" | null}
Use "virtual_obstacle" for ground hazards the laser cannot see (spills, wet floor) and "keep_out" for areas to stay away from.
If anything needed is missing or ambiguous, set "clarification" instead of guessing."#;

pub fn build_prompt(text: &str, map: &SemanticMap, docs: &str, known_pedestrians: &[String]) -> String {
    let peds = if known_pedestrians.is_empty() { "(none)".to_string() } else { known_pedestrians.join(", ") };
    format!(
        "You translate instructions for an indoor service robot.\n\
         Tasks: PointToPoint (go to a goal, optionally via points), Following (follow a pedestrian), \
         Guiding (lead a pedestrian to a goal, optionally via points).\n\n\
         Semantic map:\n{}\n\nFunctions:\n{docs}\n\nTracked pedestrians: {peds}\n\n{REPLY_SCHEMA}\n\nInstruction: {text}",
        map.describe()
    )
}

enum Decoded {
    Interpretation(Interpretation),
    Question(String),
}

fn decode(reply: &str) -> Result<Decoded, String> {
    let start = reply.find('{').ok_or("no JSON object in reply")?;
    let end = reply.rfind('}').ok_or("no JSON object in reply")?;
    if end < start {
        return Err("no JSON object in reply".into());
    }
    let value: serde_json::Value = serde_json::from_str(&reply[start..=end]).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("reply is not an object")?;
    if !obj.contains_key("task") {
        return Err("missing field `task`".into());
    }
    if let Some(q) = obj.get("clarification").and_then(|q| q.as_str()).filter(|q| !q.trim().is_empty()) {
        return Ok(Decoded::Question(q.to_string()));
    }
    serde_json::from_value(value).map(Decoded::Interpretation).map_err(|e| e.to_string())
}

/// Language-model backend. Schema-invalid replies are retried once with
/// the error appended, then surfaced as a clarification.
pub struct LlmBackend {
    transport: Box<dyn LlmTransport>,
    pub retries: usize,
}

impl LlmBackend {
    pub fn new(transport: Box<dyn LlmTransport>) -> Self {
        LlmBackend { transport, retries: 1 }
    }

    pub fn request(&self, text: &str, map: &SemanticMap, known_pedestrians: &[String]) -> Result<ParseResult, BackendError> {
        let base = build_prompt(text, map, library_docs(), known_pedestrians);
        let mut prompt = base.clone();
        for _ in 0..=self.retries {
            let reply = self.transport.complete(&prompt)?;
            match decode(&reply) {
                Ok(Decoded::Question(q)) => return Ok(ParseResult::clarify(q, ClarificationSlot::Task)),
                Ok(Decoded::Interpretation(i)) => return Ok(i.finalize(map, known_pedestrians)),
                Err(reason) => {
                    log::warn!("schema-invalid backend reply: {reason}");
                    prompt = format!("{base}\n\nYour previous reply was invalid ({reason}). Reply with the JSON object only.");
                }
            }
        }
        Ok(ParseResult::clarify("I did not understand that. Could you rephrase the instruction?", ClarificationSlot::Task))
    }
}

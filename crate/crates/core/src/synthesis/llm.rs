//! Language-model proposer over a chat-completions HTTP endpoint.
//!
//! Configured from the environment:
//!
//! - `REWARDSYNTH_LLM_BASE_URL`: endpoint root; `/chat/completions` is appended.
//! - `REWARDSYNTH_LLM_MODEL`: model name sent with each request.
//! - `REWARDSYNTH_LLM_API_KEY`: optional bearer token.

use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::proposer::{default_templates, template_proposal, PromptState, Proposal, ProposalContext, Proposer, ProposerError};
use super::reflect::ReflectionSet;
use crate::dsl::PotentialProgram;

pub const ENV_BASE_URL: &str = "REWARDSYNTH_LLM_BASE_URL";
pub const ENV_MODEL: &str = "REWARDSYNTH_LLM_MODEL";
pub const ENV_API_KEY: &str = "REWARDSYNTH_LLM_API_KEY";

/// The initial prompt. `{task_description}` is replaced with the task text.
pub const PROMPT_P0: &str = include_str!("../../assets/prompt_p0.txt");

/// Attempts per candidate before falling back to a template.
pub const PARSE_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub base_url: String,
    pub model: String,
    /// Never serialized, so it cannot leak into manifests or checkpoints.
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    /// Transport retries per request.
    pub max_retries: usize,
    pub temperature: f64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            base_url: String::new(),
            model: String::new(),
            api_key: None,
            timeout_secs: 60,
            max_retries: 3,
            temperature: 0.7,
        }
    }
}

impl LlmSettings {
    /// Fill unset fields from the environment.
    pub fn with_env(mut self) -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if self.base_url.is_empty() {
            self.base_url = var(ENV_BASE_URL).unwrap_or_default();
        }
        if self.model.is_empty() {
            self.model = var(ENV_MODEL).unwrap_or_default();
        }
        if self.api_key.is_none() {
            self.api_key = var(ENV_API_KEY);
        }
        self
    }

    pub fn validate(&self) -> Result<(), ProposerError> {
        if self.base_url.is_empty() {
            return Err(ProposerError::Config(format!("no endpoint: set {ENV_BASE_URL}")));
        }
        if self.model.is_empty() {
            return Err(ProposerError::Config(format!("no model: set {ENV_MODEL}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage { role: role.to_string(), content: content.into() }
    }
}

/// Something that answers a chat conversation.
pub trait ChatBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, String>;
}

/// Blocking HTTP client for chat-completions endpoints.
pub struct HttpBackend {
    settings: LlmSettings,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(settings: LlmSettings) -> Result<Self, ProposerError> {
        settings.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .build()
            .into();
        Ok(HttpBackend { settings, agent })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, String> {
        let url = format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.settings.model,
            "messages": messages,
            "temperature": self.settings.temperature,
        });
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

/// Pull the program out of a reply: the first fenced block if there is one,
/// otherwise the whole text.
pub fn extract_program(reply: &str) -> &str {
    if let Some(start) = reply.find("```") {
        let rest = &reply[start + 3..];
        // Skip an info string such as ```text.
        let body = rest.split_once('\n').map(|(_, b)| b).unwrap_or(rest);
        if let Some(end) = body.find("```") {
            return &body[..end];
        }
        return body;
    }
    reply
}

pub struct LlmProposer<B: ChatBackend> {
    backend: B,
    max_retries: usize,
    prompt: String,
    templates: Vec<(String, PotentialProgram)>,
    /// Total fallback proposals issued.
    pub fallbacks: usize,
}

impl LlmProposer<HttpBackend> {
    pub fn from_settings(settings: LlmSettings) -> Result<Self, ProposerError> {
        let retries = settings.max_retries;
        Ok(LlmProposer::new(HttpBackend::new(settings)?).retries(retries))
    }
}

impl<B: ChatBackend> LlmProposer<B> {
    pub fn new(backend: B) -> Self {
        LlmProposer { backend, max_retries: 3, prompt: PROMPT_P0.to_string(), templates: default_templates(), fallbacks: 0 }
    }

    pub fn retries(mut self, n: usize) -> Self {
        self.max_retries = n;
        self
    }

    /// Replace the initial prompt template.
    pub fn prompt_template(mut self, text: String) -> Self {
        self.prompt = text;
        self
    }

    fn ask(&self, messages: &[ChatMessage]) -> Result<String, ProposerError> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            match self.backend.complete(messages) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    warn!("chat request failed (attempt {}): {e}", attempt + 1);
                    last = e;
                    if attempt < self.max_retries {
                        std::thread::sleep(Duration::from_millis(250 << attempt.min(4)));
                    }
                }
            }
        }
        Err(ProposerError::Backend(last))
    }
}

impl<B: ChatBackend> Proposer for LlmProposer<B> {
    fn tag(&self) -> &str {
        "llm"
    }

    fn reproducible(&self) -> bool {
        false
    }

    fn initial_state(&self, task: &str) -> PromptState {
        PromptState::Prompt { text: self.prompt.replace("{task_description}", task), blocks: 0 }
    }

    fn propose(&mut self, ctx: &ProposalContext<'_>, state: &PromptState, k: usize) -> Result<Vec<Proposal>, ProposerError> {
        let text = match state {
            PromptState::Prompt { text, .. } => text,
            PromptState::Archive { .. } => return Err(ProposerError::Config("language-model proposer needs a prompt state".into())),
        };
        let rois = ctx.rois.join(", ");
        let mut out = Vec::with_capacity(k);
        for slot in 0..k {
            let mut messages = vec![
                ChatMessage::new("system", text.clone()),
                ChatMessage::new(
                    "user",
                    format!("Iteration {}, candidate {}. Regions available: {rois}. Propose one program.", ctx.iteration, slot + 1),
                ),
            ];
            let mut proposal = None;
            for _ in 0..PARSE_ATTEMPTS {
                let reply = self.ask(&messages)?;
                match PotentialProgram::parse(extract_program(&reply)) {
                    Ok(p) => {
                        proposal = Some(Proposal::from_program(p, "llm".into()));
                        break;
                    }
                    Err(e) => {
                        messages.push(ChatMessage::new("assistant", reply));
                        messages.push(ChatMessage::new("user", format!("That program does not parse ({e}). Reply with a corrected program.")));
                    }
                }
            }
            out.push(proposal.unwrap_or_else(|| {
                warn!("no parseable program after {PARSE_ATTEMPTS} attempts; using a template");
                self.fallbacks += 1;
                let mut p = template_proposal(&self.templates, slot);
                p.origin = format!("fallback:{}", p.origin);
                p
            }));
        }
        Ok(out)
    }

    fn reflect(&mut self, reflection: &ReflectionSet, state: PromptState) -> PromptState {
        match state {
            PromptState::Prompt { mut text, blocks } => {
                text.push('\n');
                text.push_str(&reflection.feedback_block(blocks + 1));
                PromptState::Prompt { text, blocks: blocks + 1 }
            }
            other => other,
        }
    }
}

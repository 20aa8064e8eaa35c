//! Provider-agnostic model access.
//!
//! Every model call in the runtime goes through [`LlmGateway::complete`], which
//! resolves a named [`ModelProfile`] to a backend. Two backends exist: a
//! deterministic [`Script`] replayer used for offline runs and tests, and an
//! HTTP client speaking the chat-completions JSON shape.

pub mod http;
pub mod script;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tools::Action;

pub use http::HttpProvider;
pub use script::{Script, ScriptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// One role-tagged conversational unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<Action>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            tool_calls,
            tool_call_id: None,
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    /// Checks the role-dependent field invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.role == Role::Tool && self.tool_call_id.is_none() {
            return Err("tool message without tool_call_id".into());
        }
        if self.role != Role::Assistant && !self.tool_calls.is_empty() {
            return Err(format!("{:?} message carries tool calls", self.role));
        }
        Ok(())
    }

    /// Token estimate for budget accounting. Tool-call arguments count
    /// towards the estimate so that call-heavy turns are not free.
    pub fn estimated_tokens(&self) -> u64 {
        let mut tokens = estimate_tokens(&self.content);
        for call in &self.tool_calls {
            tokens += estimate_tokens(&call.tool);
            tokens += estimate_tokens(&Value::Object(call.arguments.clone()).to_string());
        }
        tokens
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn is_zero(&self) -> bool {
        self.total() == 0
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(mut self, rhs: Self) -> TokenUsage {
        self += rhs;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    ToolCall,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default)]
    pub tool_calls: Vec<Action>,
    pub usage: TokenUsage,
    pub finish: FinishReason,
}

impl ChatResponse {
    /// Builds a response whose finish reason follows from the tool calls.
    pub fn new(content: impl Into<String>, tool_calls: Vec<Action>, usage: TokenUsage) -> Self {
        let finish = if tool_calls.is_empty() {
            FinishReason::Stop
        } else {
            FinishReason::ToolCall
        };
        Self {
            content: content.into(),
            tool_calls,
            usage,
            finish,
        }
    }

    /// `finish == tool_call` exactly when tool calls are present.
    pub fn is_well_formed(&self) -> bool {
        (self.finish == FinishReason::ToolCall) == !self.tool_calls.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderKind {
    #[serde(rename = "scripted")]
    Scripted,
    #[serde(rename = "http-openai-compatible")]
    HttpOpenAiCompatible,
}

fn default_max_output_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub provider: ProviderKind,
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
}

impl ModelProfile {
    pub fn scripted(name: impl Into<String>, script_path: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            provider: ProviderKind::Scripted,
            model: "scripted".into(),
            base_url: None,
            api_key_env: None,
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            script_path: Some(script_path.into()),
        }
    }

    pub fn http(name: impl Into<String>, base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            provider: ProviderKind::HttpOpenAiCompatible,
            model: model.into(),
            base_url: Some(base_url.into()),
            api_key_env: None,
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            script_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("profile name is empty".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return Err("max_output_tokens must be positive".into());
        }
        match self.provider {
            ProviderKind::Scripted if self.script_path.is_none() => {
                Err("scripted provider requires script_path".into())
            }
            ProviderKind::HttpOpenAiCompatible if self.base_url.is_none() => {
                Err("http provider requires base_url".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("profile `{0}` is already registered")]
    DuplicateProfile(String),
    #[error("invalid profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("profile `{0}` not found")]
    ProfileNotFound(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Provider { status: Option<u16>, message: String },
    #[error(transparent)]
    Script(#[from] ScriptError),
}

impl GatewayError {
    pub fn provider(message: impl Into<String>) -> Self {
        GatewayError::Provider {
            status: None,
            message: message.into(),
        }
    }
}

enum Backend {
    Scripted(Script),
    Http(HttpProvider),
}

struct Registered {
    profile: ModelProfile,
    backend: Backend,
}

/// Registry of model profiles. Populated once at setup, then shared
/// read-only between agent slots.
#[derive(Default)]
pub struct LlmGateway {
    profiles: BTreeMap<String, Registered>,
}

impl LlmGateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a profile. Scripted profiles load and parse their script here
    /// so malformed fixtures fail before any run starts.
    pub fn register_profile(&mut self, profile: ModelProfile) -> Result<(), GatewayError> {
        if self.profiles.contains_key(&profile.name) {
            return Err(GatewayError::DuplicateProfile(profile.name));
        }
        profile.validate().map_err(|reason| GatewayError::InvalidProfile {
            name: profile.name.clone(),
            reason,
        })?;
        let backend = match profile.provider {
            ProviderKind::Scripted => {
                let path = profile.script_path.as_ref().expect("validated");
                Backend::Scripted(Script::load(path)?)
            }
            ProviderKind::HttpOpenAiCompatible => Backend::Http(HttpProvider::new(&profile)),
        };
        self.profiles
            .insert(profile.name.clone(), Registered { profile, backend });
        Ok(())
    }

    /// Registers a scripted profile backed by an already parsed script.
    pub fn register_script(&mut self, name: impl Into<String>, script: Script) -> Result<(), GatewayError> {
        let name = name.into();
        if self.profiles.contains_key(&name) {
            return Err(GatewayError::DuplicateProfile(name));
        }
        let profile = ModelProfile::scripted(name.clone(), "<inline>");
        self.profiles.insert(
            name,
            Registered {
                profile,
                backend: Backend::Scripted(script),
            },
        );
        Ok(())
    }

    pub fn profile(&self, name: &str) -> Option<&ModelProfile> {
        self.profiles.get(name).map(|r| &r.profile)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.profiles.contains_key(name)
    }

    pub fn profile_names(&self) -> Vec<String> {
        self.profiles.keys().cloned().collect()
    }

    /// Sends `messages` to the named profile. `conversation` keys the scripted
    /// cursor so concurrent slots sharing a profile do not interleave.
    pub fn complete(
        &self,
        profile_name: &str,
        conversation: &str,
        messages: &[ChatMessage],
        tools: &[Value],
    ) -> Result<ChatResponse, GatewayError> {
        let registered = self
            .profiles
            .get(profile_name)
            .ok_or_else(|| GatewayError::ProfileNotFound(profile_name.to_string()))?;
        match messages.first() {
            None => return Err(GatewayError::InvalidRequest("empty message list".into())),
            Some(m) if !matches!(m.role, Role::System | Role::User) => {
                return Err(GatewayError::InvalidRequest(
                    "first message must have role system or user".into(),
                ))
            }
            _ => {}
        }
        if let Some(bad) = messages.iter().find_map(|m| m.validate().err()) {
            return Err(GatewayError::InvalidRequest(bad));
        }
        let response = match &registered.backend {
            Backend::Scripted(script) => script.step(conversation, messages),
            Backend::Http(http) => http.complete(&registered.profile, messages, tools)?,
        };
        debug_assert!(response.is_well_formed());
        Ok(response)
    }
}

/// `ceil(chars / 4)`, counted in Unicode scalar values.
pub fn estimate_tokens(text: &str) -> u64 {
    let chars = text.chars().count() as u64;
    chars.div_ceil(4)
}

//! The per-agent reactive loop: reason, invoke tools, observe, self-critique.
//!
//! One [`AgentState`] is advanced a turn at a time by [`step`]; [`run`] just
//! iterates it. Every model reply, tool call, observation, critique and
//! compression is emitted to the [`EventSink`] before the step returns.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::context::{Context, ContextBudget, ContextEntry, ContextError, EntryKind};
use crate::llm::{ChatMessage, ChatResponse, GatewayError, LlmGateway, TokenUsage};
use crate::skills::SkillIndex;
use crate::tools::{failed_pair, Action, Observation, ToolLimits, ToolRegistry};
use crate::trajectory::{EventDraft, EventKind, EventSink, RecorderError};

pub const DEFAULT_FINAL_MARKER: &str = "FINAL:";
pub const DEFAULT_MAX_TURNS: u32 = 10;

/// Prompt appended before each self-critique call.
pub fn critique_prompt() -> &'static str {
    include_str!("../../resources/critique_prompt.txt").trim_end()
}

fn default_max_turns() -> u32 {
    DEFAULT_MAX_TURNS
}

fn default_critique_every() -> u32 {
    1
}

fn default_final_marker() -> String {
    DEFAULT_FINAL_MARKER.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    #[serde(default)]
    pub system_prompt: String,
    pub llm_profile: String,
    #[serde(default)]
    pub tool_names: Vec<String>,
    #[serde(default)]
    pub skill_roots: Vec<PathBuf>,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    #[serde(default = "default_critique_every")]
    pub critique_every: u32,
    #[serde(default)]
    pub budget: ContextBudget,
    #[serde(default = "default_final_marker")]
    pub final_marker: String,
}

impl AgentSpec {
    pub fn new(name: impl Into<String>, llm_profile: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            system_prompt: String::new(),
            llm_profile: llm_profile.into(),
            tool_names: Vec::new(),
            skill_roots: Vec::new(),
            max_turns: DEFAULT_MAX_TURNS,
            critique_every: 1,
            budget: ContextBudget::default(),
            final_marker: default_final_marker(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("agent name is empty".into());
        }
        if self.max_turns == 0 {
            return Err(format!("agent `{}`: max_turns must be at least 1", self.name));
        }
        if self.critique_every == 0 {
            return Err(format!("agent `{}`: critique_every must be at least 1", self.name));
        }
        if self.final_marker.trim().is_empty() {
            return Err(format!("agent `{}`: final_marker is empty", self.name));
        }
        self.budget
            .validate()
            .map_err(|e| format!("agent `{}`: {e}", self.name))
    }
}

/// How an agent instance is named in the trajectory and towards the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentIdentity {
    /// Unique within a run; prefixes action ids and tags events.
    pub id: String,
    pub slot: Option<String>,
    /// Key of the scripted-provider cursor. Several runs of one slot may
    /// share it so a script reads as one continuous dialogue.
    pub conversation: String,
}

impl AgentIdentity {
    pub fn new(id: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            conversation: id.clone(),
            slot: None,
            id,
        }
    }

    pub fn in_slot(mut self, slot: impl Into<String>) -> Self {
        self.slot = Some(slot.into());
        self
    }

    pub fn conversation(mut self, conversation: impl Into<String>) -> Self {
        self.conversation = conversation.into();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentInput {
    pub task: String,
    /// Pinned ahead of the task, e.g. prefetched wisdom.
    pub notes: Vec<String>,
}

impl AgentInput {
    pub fn task(task: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            notes: Vec::new(),
        }
    }
}

pub struct AgentServices<'a> {
    pub gateway: &'a LlmGateway,
    pub tools: &'a ToolRegistry,
    pub skills: &'a SkillIndex,
    pub sink: &'a dyn EventSink,
    pub limits: ToolLimits,
    pub deadline: Option<Instant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub response: ChatResponse,
    pub actions: Vec<Action>,
    pub observations: Vec<Observation>,
    pub critique: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Answered,
    MaxTurns,
    BudgetExhausted,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent: String,
    pub status: AgentStatus,
    pub final_answer: Option<String>,
    pub turns: u32,
    pub usage: TokenUsage,
    /// Content of the last model reply, answered or not.
    pub last_response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Answered(String),
    MaxTurns,
    BudgetExhausted,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("agent already terminated")]
    SteppedAfterTermination,
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

/// The text after `marker` when some line of `content` starts with it
/// (leading whitespace ignored). Everything after the marker, including later
/// lines, is the answer.
pub fn extract_answer(content: &str, marker: &str) -> Option<String> {
    let mut offset = 0;
    for line in content.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if trimmed.starts_with(marker) {
            let start = offset + (line.len() - trimmed.len()) + marker.len();
            return Some(content[start..].trim().to_string());
        }
        offset += line.len();
    }
    None
}

#[derive(Debug, Clone)]
pub struct AgentState {
    identity: AgentIdentity,
    spec: AgentSpec,
    context: Context,
    records: Vec<TurnRecord>,
    usage: TokenUsage,
    outcome: Option<AgentOutcome>,
}

impl AgentState {
    pub fn identity(&self) -> &AgentIdentity {
        &self.identity
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn records(&self) -> &[TurnRecord] {
        &self.records
    }

    pub fn usage(&self) -> TokenUsage {
        self.usage
    }

    pub fn outcome(&self) -> Option<&AgentOutcome> {
        self.outcome.as_ref()
    }

    pub fn is_terminated(&self) -> bool {
        self.outcome.is_some()
    }

    fn event(&self, kind: EventKind, turn: u32, payload: Value) -> EventDraft {
        EventDraft::new(kind, payload)
            .slot(self.identity.slot.clone())
            .agent(self.identity.id.clone())
            .turn(turn)
    }

    fn finish(&mut self, status: AgentStatus, final_answer: Option<String>, error: Option<String>) {
        self.outcome = Some(AgentOutcome {
            agent: self.identity.id.clone(),
            status,
            final_answer,
            turns: self.records.len() as u32,
            usage: self.usage,
            last_response: self.records.last().map(|r| r.response.content.clone()),
            error,
        });
    }

    fn fail(&mut self, services: &AgentServices, turn: u32, message: String) -> Result<(), EngineError> {
        services
            .sink
            .emit(self.event(EventKind::Error, turn, json!({ "message": message })))?;
        self.finish(AgentStatus::Error, None, Some(message));
        Ok(())
    }
}

/// Answered beats max_turns beats budget exhaustion.
pub fn check_termination(state: &AgentState, spec: &AgentSpec) -> Termination {
    if let Some(last) = state.records.last() {
        if let Some(answer) = extract_answer(&last.response.content, &spec.final_marker) {
            return Termination::Answered(answer);
        }
        if last.turn >= spec.max_turns {
            return Termination::MaxTurns;
        }
    }
    if !state.context.minimal_fits(&spec.budget) {
        return Termination::BudgetExhausted;
    }
    Termination::Continue
}

/// Validates references and seeds the context with the pinned entries:
/// system prompt, skill metadata, notes, task.
pub fn start(
    identity: AgentIdentity,
    spec: AgentSpec,
    input: AgentInput,
    services: &AgentServices,
) -> Result<AgentState, EngineError> {
    spec.validate().map_err(EngineError::Config)?;
    if !services.gateway.contains(&spec.llm_profile) {
        return Err(EngineError::Config(format!(
            "agent `{}`: unknown llm profile `{}`",
            spec.name, spec.llm_profile
        )));
    }
    if let Some(missing) = spec.tool_names.iter().find(|t| !services.tools.contains(t)) {
        return Err(EngineError::Config(format!(
            "agent `{}`: unknown tool `{missing}`",
            spec.name
        )));
    }
    if let Some(missing) = spec.skill_roots.iter().find(|r| !r.is_dir()) {
        return Err(EngineError::Config(format!(
            "agent `{}`: skill root {} does not exist",
            spec.name,
            missing.display()
        )));
    }

    let mut context = Context::new();
    let mut pin = |message: ChatMessage, kind: EntryKind| {
        context
            .append(ContextEntry::with_pin(message, kind, true))
            .map_err(|e| EngineError::Config(e.to_string()))
    };
    if !spec.system_prompt.trim().is_empty() {
        pin(ChatMessage::system(spec.system_prompt.clone()), EntryKind::System)?;
    }
    let skills = if spec.skill_roots.is_empty() {
        services.skills.clone()
    } else {
        let mut filtered = services.skills.clone();
        filtered
            .skills
            .retain(|_, m| spec.skill_roots.iter().any(|r| m.body_path.starts_with(r)));
        filtered
    };
    let metadata = skills.render_metadata();
    if !metadata.is_empty() {
        pin(ChatMessage::system(metadata), EntryKind::System)?;
    }
    for note in input.notes.iter().filter(|n| !n.trim().is_empty()) {
        pin(ChatMessage::user(note.clone()), EntryKind::Task)?;
    }
    pin(ChatMessage::user(input.task), EntryKind::Task)?;

    Ok(AgentState {
        identity,
        spec,
        context,
        records: Vec::new(),
        usage: TokenUsage::default(),
        outcome: None,
    })
}

fn complete_with_retry(
    services: &AgentServices,
    profile: &str,
    conversation: &str,
    messages: &[ChatMessage],
    tools: &[Value],
) -> Result<ChatResponse, GatewayError> {
    match services.gateway.complete(profile, conversation, messages, tools) {
        Ok(r) => Ok(r),
        Err(first) => {
            log::warn!("provider call for `{conversation}` failed, retrying: {first}");
            services.gateway.complete(profile, conversation, messages, tools)
        }
    }
}

fn past(deadline: Option<Instant>) -> bool {
    deadline.is_some_and(|d| Instant::now() >= d)
}

/// Advances the agent by exactly one turn.
pub fn step(state: &mut AgentState, services: &AgentServices) -> Result<(), EngineError> {
    if state.is_terminated() {
        return Err(EngineError::SteppedAfterTermination);
    }
    if past(services.deadline) {
        state.finish(AgentStatus::Timeout, None, None);
        return Ok(());
    }
    let turn = state.records.len() as u32 + 1;
    let spec = state.spec.clone();
    let budget = spec.budget;

    if !state.context.minimal_fits(&budget) {
        if let Err(message) = compress(state, services, turn - 1) {
            return state.fail(services, turn - 1, message);
        }
        if !state.context.minimal_fits(&budget) {
            state.finish(AgentStatus::BudgetExhausted, None, None);
            return Ok(());
        }
    }

    let messages = match state.context.render(&budget) {
        Ok(m) => m,
        Err(ContextError::PinnedOverflow { .. }) => {
            state.finish(AgentStatus::BudgetExhausted, None, None);
            return Ok(());
        }
        Err(e) => return state.fail(services, turn - 1, e.to_string()),
    };
    let schemas = services.tools.render_subset(&spec.tool_names);
    let mut response = match complete_with_retry(
        services,
        &spec.llm_profile,
        &state.identity.conversation,
        &messages,
        &schemas,
    ) {
        Ok(r) => r,
        Err(e) => return state.fail(services, turn - 1, format!("provider error: {e}")),
    };

    for (k, action) in response.tool_calls.iter_mut().enumerate() {
        action.id = format!("{}/t{turn}/c{k}", state.identity.id);
    }
    state.usage += response.usage;
    let assistant = ChatMessage::assistant(response.content.clone(), response.tool_calls.clone());
    if let Err(e) = state.context.append(ContextEntry::new(assistant, EntryKind::Dialogue)) {
        return state.fail(services, turn - 1, e.to_string());
    }
    let action_ids: Vec<&str> = response.tool_calls.iter().map(|a| a.id.as_str()).collect();
    services.sink.emit(
        state
            .event(
                EventKind::Turn,
                turn,
                json!({"content": response.content, "finish": response.finish, "action_ids": action_ids}),
            )
            .usage(response.usage),
    )?;

    let mut observations = Vec::with_capacity(response.tool_calls.len());
    for action in &response.tool_calls {
        services.sink.emit(state.event(
            EventKind::ToolCall,
            turn,
            json!({"action_id": action.id, "tool": action.tool, "arguments": action.arguments}),
        ))?;
        let (execution, observation) = if spec.tool_names.contains(&action.tool) {
            let mut limits = services.limits;
            if let Some(deadline) = services.deadline {
                let remaining = deadline.saturating_duration_since(Instant::now()).as_millis() as u64;
                limits.timeout_ms = limits.timeout_ms.min(remaining).max(1);
            }
            services.tools.invoke(action, limits)
        } else {
            failed_pair(action, format!("tool `{}` is not available to this agent", action.tool))
        };
        services.sink.emit(state.event(
            EventKind::Observation,
            turn,
            json!({
                "action_id": action.id,
                "status": execution.status,
                "duration_ms": execution.duration_ms,
                "content": observation.content,
                "truncated": observation.truncated,
                "is_error": observation.is_error,
            }),
        ))?;
        let message = ChatMessage::tool(action.id.clone(), observation.content.clone());
        if let Err(e) = state.context.append(ContextEntry::new(message, EntryKind::Dialogue)) {
            observations.push(observation);
            state.records.push(TurnRecord {
                turn,
                actions: response.tool_calls.clone(),
                observations,
                critique: None,
                response,
            });
            return state.fail(services, turn, e.to_string());
        }
        observations.push(observation);
    }
    state.records.push(TurnRecord {
        turn,
        actions: response.tool_calls.clone(),
        observations,
        critique: None,
        response,
    });

    match check_termination(state, &spec) {
        Termination::Answered(answer) => {
            state.finish(AgentStatus::Answered, Some(answer), None);
            return Ok(());
        }
        Termination::MaxTurns => {
            state.finish(AgentStatus::MaxTurns, None, None);
            return Ok(());
        }
        _ => {}
    }

    if turn.is_multiple_of(spec.critique_every) {
        if let Err(message) = critique(state, services, turn) {
            return state.fail(services, turn, message);
        }
    }
    if let Err(message) = compress(state, services, turn) {
        return state.fail(services, turn, message);
    }
    if check_termination(state, &spec) == Termination::BudgetExhausted {
        state.finish(AgentStatus::BudgetExhausted, None, None);
    }
    Ok(())
}

/// Appends the critique prompt and the model's reflection as unpinned
/// critique entries. Tool calls in the reflection are ignored.
fn critique(state: &mut AgentState, services: &AgentServices, turn: u32) -> Result<(), String> {
    let budget = state.spec.budget;
    let prompt = ContextEntry::new(ChatMessage::user(critique_prompt()), EntryKind::Critique);
    state.context.append(prompt).map_err(|e| e.to_string())?;
    let messages = state.context.render(&budget).map_err(|e| e.to_string())?;
    let response = complete_with_retry(
        services,
        &state.spec.llm_profile,
        &state.identity.conversation,
        &messages,
        &[],
    )
    .map_err(|e| format!("provider error during critique: {e}"))?;
    state.usage += response.usage;
    let reflection = ChatMessage::assistant(response.content.clone(), Vec::new());
    state
        .context
        .append(ContextEntry::new(reflection, EntryKind::Critique))
        .map_err(|e| e.to_string())?;
    services
        .sink
        .emit(
            state
                .event(EventKind::Critique, turn, json!({"content": response.content}))
                .usage(response.usage),
        )
        .map_err(|e| e.to_string())?;
    if let Some(record) = state.records.last_mut() {
        record.critique = Some(response.content);
    }
    Ok(())
}

fn compress(state: &mut AgentState, services: &AgentServices, turn: u32) -> Result<(), String> {
    let budget = state.spec.budget;
    let profile = state.spec.llm_profile.clone();
    let conversation = format!("{}/summarize", state.identity.conversation);
    let event = state
        .context
        .maybe_compress(&budget, |messages| {
            complete_with_retry(services, &profile, &conversation, messages, &[])
        })
        .map_err(|e| e.to_string())?;
    if let Some(ev) = event {
        state.usage += ev.usage;
        let mut draft = state.event(
            EventKind::Compression,
            turn,
            json!({
                "strategy": ev.strategy,
                "replaced_count": ev.replaced_count,
                "summary_tokens": ev.summary_tokens,
                "before_tokens": ev.before_tokens,
                "after_tokens": ev.after_tokens,
                "model_called": matches!(ev.strategy, crate::context::CompressionStrategy::Summarize),
            }),
        );
        if !ev.usage.is_zero() {
            draft = draft.usage(ev.usage);
        }
        services.sink.emit(draft).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Runs the agent until it terminates.
pub fn run(
    identity: AgentIdentity,
    spec: AgentSpec,
    input: AgentInput,
    services: &AgentServices,
) -> Result<AgentOutcome, EngineError> {
    let mut state = start(identity, spec, input, services)?;
    while !state.is_terminated() {
        step(&mut state, services)?;
    }
    Ok(state.outcome.expect("terminated"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_at_line_start_only() {
        assert_eq!(extract_answer("FINAL: 42", "FINAL:"), Some("42".into()));
        assert_eq!(extract_answer("the FINAL: answer", "FINAL:"), None);
        assert_eq!(
            extract_answer("thinking\n  FINAL:  a\nb \n", "FINAL:"),
            Some("a\nb".into())
        );
        assert_eq!(extract_answer("", "FINAL:"), None);
    }

    #[test]
    fn spec_validation() {
        let mut spec = AgentSpec::new("a", "p");
        assert!(spec.validate().is_ok());
        spec.max_turns = 0;
        assert!(spec.validate().is_err());
        spec.max_turns = 1;
        spec.critique_every = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn critique_prompt_is_fixed() {
        assert!(critique_prompt().starts_with("SELF-CRITIQUE."));
    }
}

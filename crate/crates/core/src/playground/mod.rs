//! Multi-agent workflows over declaratively configured agent slots.
//!
//! A playground is a named [`Workflow`] function plus the parameter types and
//! slot roles it expects. The registry is filled at startup by registration
//! hooks; the built-in patterns live in [`patterns`], one file each.

pub mod cache;
pub mod patterns;

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::{self, AgentIdentity, AgentInput, AgentOutcome, AgentServices, AgentSpec, AgentStatus, EngineError};
use crate::llm::LlmGateway;
use crate::skills::SkillIndex;
use crate::tools::{ToolLimits, ToolRegistry};
use crate::trajectory::{BufferedSink, EventDraft, EventKind, EventSink, RecorderError};

pub use cache::{CacheError, CognitiveCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSlot {
    pub slot_name: String,
    pub role: String,
    pub spec: AgentSpec,
}

impl AgentSlot {
    /// The slot's spec is named after the slot.
    pub fn new(slot_name: impl Into<String>, role: impl Into<String>, mut spec: AgentSpec) -> Self {
        let slot_name = slot_name.into();
        spec.name = slot_name.clone();
        Self {
            slot_name,
            role: role.into(),
            spec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Integer,
    Real,
    Text,
    TextList,
}

impl ParamType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::Integer => v.as_u64().is_some(),
            ParamType::Real => v.as_f64().is_some(),
            ParamType::Text => v.is_string(),
            ParamType::TextList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaygroundStatus {
    Ok,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaygroundResult {
    pub final_answer: String,
    pub status: PlaygroundStatus,
    /// Keyed by agent id: the slot name, `slot#k` for clones of one
    /// template, with `@n` appended from a slot's second run on.
    pub per_slot_outcomes: BTreeMap<String, AgentOutcome>,
    pub rounds_used: u32,
}

#[derive(Debug, Error)]
pub enum PlaygroundError {
    #[error("playground `{0}` not found")]
    PlaygroundNotFound(String),
    #[error("playground `{0}` already registered")]
    DuplicatePlayground(String),
    #[error("slot configuration: {0}")]
    SlotConfigError(String),
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("wall-clock limit reached")]
    Timeout,
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

pub type Workflow = fn(&mut PlaygroundContext) -> Result<PlaygroundResult, PlaygroundError>;

#[derive(Clone)]
pub struct PlaygroundDefinition {
    pub name: String,
    pub description: String,
    pub params_schema: BTreeMap<String, ParamType>,
    /// `(role, minimum, maximum)` slot counts.
    pub roles: Vec<(String, usize, usize)>,
    pub workflow: Workflow,
}

impl PlaygroundDefinition {
    pub fn new(name: &str, description: &str, workflow: Workflow) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params_schema: BTreeMap::new(),
            roles: Vec::new(),
            workflow,
        }
    }

    pub fn param(mut self, name: &str, ty: ParamType) -> Self {
        self.params_schema.insert(name.into(), ty);
        self
    }

    pub fn role(mut self, role: &str, min: usize, max: usize) -> Self {
        self.roles.push((role.into(), min, max));
        self
    }

    pub fn check_params(&self, params: &BTreeMap<String, Value>) -> Result<(), PlaygroundError> {
        for (k, v) in params {
            match self.params_schema.get(k) {
                None => {
                    return Err(PlaygroundError::InvalidParams(format!(
                        "unknown param `{k}` for `{}`",
                        self.name
                    )))
                }
                Some(ty) if !ty.accepts(v) => {
                    return Err(PlaygroundError::InvalidParams(format!(
                        "param `{k}` must be {ty:?}, got {v}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn check_roles(&self, slots: &[AgentSlot]) -> Result<(), PlaygroundError> {
        for (role, min, max) in &self.roles {
            let n = slots.iter().filter(|s| &s.role == role).count();
            if n < *min || n > *max {
                let bound = if min == max {
                    format!("{min}")
                } else if *max == usize::MAX {
                    format!("at least {min}")
                } else {
                    format!("{min}..={max}")
                };
                return Err(PlaygroundError::SlotConfigError(format!(
                    "`{}` needs {bound} slot(s) with role `{role}`, found {n}",
                    self.name
                )));
            }
        }
        if !self.roles.is_empty() {
            if let Some(s) = slots.iter().find(|s| !self.roles.iter().any(|(r, _, _)| r == &s.role)) {
                return Err(PlaygroundError::SlotConfigError(format!(
                    "slot `{}` has role `{}` which `{}` does not use",
                    s.slot_name, s.role, self.name
                )));
            }
        }
        Ok(())
    }
}

/// Hook run at registry construction.
pub type RegistrationHook = fn(&mut PlaygroundRegistry) -> Result<(), PlaygroundError>;

#[derive(Default)]
pub struct PlaygroundRegistry {
    definitions: BTreeMap<String, PlaygroundDefinition>,
}

impl PlaygroundRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A registry populated by the built-in hook and then `hooks` in order.
    pub fn startup(hooks: &[RegistrationHook]) -> Result<Self, PlaygroundError> {
        let mut registry = Self::empty();
        patterns::register_builtins(&mut registry)?;
        for hook in hooks {
            hook(&mut registry)?;
        }
        Ok(registry)
    }

    pub fn with_builtins() -> Self {
        Self::startup(&[]).expect("built-in playground names are unique")
    }

    pub fn register(&mut self, definition: PlaygroundDefinition) -> Result<(), PlaygroundError> {
        if self.definitions.contains_key(&definition.name) {
            return Err(PlaygroundError::DuplicatePlayground(definition.name));
        }
        self.definitions.insert(definition.name.clone(), definition);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&PlaygroundDefinition> {
        self.definitions.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.definitions.keys().cloned().collect()
    }

    /// Checks params, roles and every slot's references without running
    /// anything.
    pub fn validate(
        &self,
        name: &str,
        params: &BTreeMap<String, Value>,
        slots: &[AgentSlot],
        services: &PlaygroundServices,
    ) -> Result<&PlaygroundDefinition, PlaygroundError> {
        let def = self
            .get(name)
            .ok_or_else(|| PlaygroundError::PlaygroundNotFound(name.to_string()))?;
        def.check_params(params)?;
        let mut seen = std::collections::BTreeSet::new();
        for slot in slots {
            if !seen.insert(slot.slot_name.as_str()) {
                return Err(PlaygroundError::SlotConfigError(format!(
                    "duplicate slot `{}`",
                    slot.slot_name
                )));
            }
            let err = |m: String| PlaygroundError::SlotConfigError(format!("slot `{}`: {m}", slot.slot_name));
            slot.spec.validate().map_err(err)?;
            if !services.gateway.contains(&slot.spec.llm_profile) {
                return Err(err(format!("unknown llm profile `{}`", slot.spec.llm_profile)));
            }
            if let Some(t) = slot.spec.tool_names.iter().find(|t| !services.tools.contains(t)) {
                return Err(err(format!("unknown tool `{t}`")));
            }
            if let Some(r) = slot.spec.skill_roots.iter().find(|r| !r.is_dir()) {
                return Err(err(format!("skill root {} does not exist", r.display())));
            }
        }
        def.check_roles(slots)?;
        Ok(def)
    }

    pub fn run(
        &self,
        name: &str,
        task: &str,
        params: BTreeMap<String, Value>,
        slots: Vec<AgentSlot>,
        services: PlaygroundServices,
    ) -> Result<PlaygroundResult, PlaygroundError> {
        let def = self.validate(name, &params, &slots, &services)?;
        let mut ctx = PlaygroundContext::new(task, params, slots, services);
        let mut result = (def.workflow)(&mut ctx)?;
        if result.status == PlaygroundStatus::Ok && result.final_answer.trim().is_empty() {
            result.status = PlaygroundStatus::Partial;
        }
        Ok(result)
    }
}

/// Shared, read-only services plus the two shared sinks.
#[derive(Clone, Copy)]
pub struct PlaygroundServices<'a> {
    pub gateway: &'a LlmGateway,
    pub tools: &'a ToolRegistry,
    pub skills: &'a SkillIndex,
    pub sink: &'a dyn EventSink,
    pub cache: &'a CognitiveCache,
    pub limits: ToolLimits,
    pub deadline: Option<Instant>,
    pub seed: u64,
}

/// One agent run: a slot, the instance name it runs under, and its input.
#[derive(Debug, Clone)]
pub struct Job {
    pub slot: AgentSlot,
    pub instance: String,
    pub input: AgentInput,
}

impl Job {
    pub fn new(slot: &AgentSlot, input: AgentInput) -> Self {
        Self {
            instance: slot.slot_name.clone(),
            slot: slot.clone(),
            input,
        }
    }

    /// Runs under `instance` instead of the slot name, giving the run its own
    /// conversation.
    pub fn instance(mut self, instance: impl Into<String>) -> Self {
        self.instance = instance.into();
        self
    }
}

pub struct PlaygroundContext<'a> {
    pub task: String,
    pub params: BTreeMap<String, Value>,
    pub slots: Vec<AgentSlot>,
    pub services: PlaygroundServices<'a>,
    pub outcomes: BTreeMap<String, AgentOutcome>,
    /// Seeded from the experiment seed; the only randomness workflows may use.
    pub rng: ChaCha8Rng,
    runs: HashMap<String, u32>,
}

impl<'a> PlaygroundContext<'a> {
    pub fn new(
        task: &str,
        params: BTreeMap<String, Value>,
        slots: Vec<AgentSlot>,
        services: PlaygroundServices<'a>,
    ) -> Self {
        Self {
            task: task.to_string(),
            params,
            slots,
            rng: ChaCha8Rng::seed_from_u64(services.seed),
            services,
            outcomes: BTreeMap::new(),
            runs: HashMap::new(),
        }
    }

    /// Slots with `role`, in slot-name order.
    pub fn slots_with_role(&self, role: &str) -> Vec<AgentSlot> {
        let mut slots: Vec<AgentSlot> = self.slots.iter().filter(|s| s.role == role).cloned().collect();
        slots.sort_by(|a, b| a.slot_name.cmp(&b.slot_name));
        slots
    }

    pub fn slot_with_role(&self, role: &str) -> Result<AgentSlot, PlaygroundError> {
        match self.slots_with_role(role).as_slice() {
            [one] => Ok(one.clone()),
            other => Err(PlaygroundError::SlotConfigError(format!(
                "expected exactly one `{role}` slot, found {}",
                other.len()
            ))),
        }
    }

    pub fn optional_slot(&self, role: &str) -> Option<AgentSlot> {
        self.slots_with_role(role).into_iter().next()
    }

    /// `n` instances of the role: the slots themselves when exactly `n` are
    /// configured, or `n` clones when a single template is.
    pub fn instances(&self, role: &str, n: u32) -> Result<Vec<(AgentSlot, String)>, PlaygroundError> {
        let slots = self.slots_with_role(role);
        match slots.len() {
            1 if n != 1 => Ok((1..=n)
                .map(|k| (slots[0].clone(), format!("{}#{k}", slots[0].slot_name)))
                .collect()),
            len if len == n as usize => Ok(slots
                .into_iter()
                .map(|s| {
                    let name = s.slot_name.clone();
                    (s, name)
                })
                .collect()),
            len => Err(PlaygroundError::InvalidParams(format!(
                "{n} `{role}` instances requested but {len} slots configured"
            ))),
        }
    }

    pub fn param_u32(&self, name: &str, default: u32, min: u32) -> Result<u32, PlaygroundError> {
        let v = match self.params.get(name) {
            None => default,
            Some(v) => v
                .as_u64()
                .and_then(|n| u32::try_from(n).ok())
                .ok_or_else(|| PlaygroundError::InvalidParams(format!("`{name}` must be a non-negative integer")))?,
        };
        if v < min {
            return Err(PlaygroundError::InvalidParams(format!(
                "`{name}` must be at least {min}, got {v}"
            )));
        }
        Ok(v)
    }

    pub fn param_f64(&self, name: &str) -> Option<f64> {
        self.params.get(name).and_then(Value::as_f64)
    }

    pub fn param_strings(&self, name: &str) -> Option<Vec<String>> {
        self.params
            .get(name)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
    }

    pub fn timed_out(&self) -> bool {
        self.services.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn identity(&mut self, job: &Job) -> AgentIdentity {
        let n = self.runs.entry(job.instance.clone()).or_insert(0);
        *n += 1;
        let id = if *n == 1 {
            job.instance.clone()
        } else {
            format!("{}@{n}", job.instance)
        };
        AgentIdentity::new(id)
            .in_slot(job.slot.slot_name.clone())
            .conversation(job.instance.clone())
    }

    fn agent_services<'s>(&self, sink: &'s dyn EventSink) -> AgentServices<'s>
    where
        'a: 's,
    {
        AgentServices {
            gateway: self.services.gateway,
            tools: self.services.tools,
            skills: self.services.skills,
            sink,
            limits: self.services.limits,
            deadline: self.services.deadline,
        }
    }

    fn finish_job(&mut self, outcome: Result<AgentOutcome, EngineError>) -> Result<AgentOutcome, PlaygroundError> {
        let outcome = match outcome {
            Ok(o) => o,
            Err(EngineError::Recorder(e)) => return Err(e.into()),
            Err(e) => return Err(PlaygroundError::SlotConfigError(e.to_string())),
        };
        self.outcomes.insert(outcome.agent.clone(), outcome.clone());
        if outcome.status == AgentStatus::Timeout {
            return Err(PlaygroundError::Timeout);
        }
        Ok(outcome)
    }

    /// Runs one agent to termination, streaming its events.
    pub fn run_agent(&mut self, job: Job) -> Result<AgentOutcome, PlaygroundError> {
        if self.timed_out() {
            return Err(PlaygroundError::Timeout);
        }
        let identity = self.identity(&job);
        let services = self.agent_services(self.services.sink);
        let outcome = agent::run(identity, job.slot.spec, job.input, &services);
        self.finish_job(outcome)
    }

    /// Runs the jobs concurrently, one thread each. Every branch records into
    /// its own buffer; buffers are committed in job order after all branches
    /// finish, so the trajectory does not depend on thread scheduling.
    pub fn run_parallel(&mut self, jobs: Vec<Job>) -> Result<Vec<AgentOutcome>, PlaygroundError> {
        if self.timed_out() {
            return Err(PlaygroundError::Timeout);
        }
        let prepared: Vec<(AgentIdentity, Job)> = jobs.into_iter().map(|j| (self.identity(&j), j)).collect();
        let this = &*self;
        let results: Vec<(Result<AgentOutcome, EngineError>, BufferedSink)> = std::thread::scope(|scope| {
            let handles: Vec<_> = prepared
                .into_iter()
                .map(|(identity, job)| {
                    scope.spawn(move || {
                        let sink = BufferedSink::new();
                        let services = this.agent_services(&sink);
                        let outcome = agent::run(identity, job.slot.spec, job.input, &services);
                        (outcome, sink)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("agent branch panicked"))
                .collect()
        });
        let mut outcomes = Vec::with_capacity(results.len());
        let mut timed_out = false;
        for (outcome, sink) in results {
            self.services.sink.emit_all(sink.into_events())?;
            match self.finish_job(outcome) {
                Ok(o) => outcomes.push(o),
                Err(PlaygroundError::Timeout) => timed_out = true,
                Err(e) => return Err(e),
            }
        }
        if timed_out {
            return Err(PlaygroundError::Timeout);
        }
        Ok(outcomes)
    }

    pub fn promote_round(&mut self, round: u32, findings: &str) -> Result<(), PlaygroundError> {
        let path = self.services.cache.promote_round(round, findings)?;
        self.services.sink.emit(
            EventDraft::new(
                EventKind::Promotion,
                json!({"tier": "round", "round": round, "record": file_name(&path), "text": findings}),
            )
            .turn(round),
        )?;
        Ok(())
    }

    pub fn promote_run(&mut self, wisdom: &str) -> Result<(), PlaygroundError> {
        let path = self.services.cache.promote_run(wisdom)?;
        self.services.sink.emit(EventDraft::new(
            EventKind::Promotion,
            json!({"tier": "run", "record": file_name(&path), "text": wisdom}),
        ))?;
        Ok(())
    }

    pub fn result(&mut self, final_answer: String, status: PlaygroundStatus, rounds_used: u32) -> PlaygroundResult {
        PlaygroundResult {
            final_answer,
            status,
            per_slot_outcomes: std::mem::take(&mut self.outcomes),
            rounds_used,
        }
    }
}

fn file_name(path: &std::path::Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// The usable text of an outcome: the answer when answered, the last reply
/// when the agent ran out of turns or budget, nothing on error or timeout.
pub fn usable_text(o: &AgentOutcome) -> Option<String> {
    match o.status {
        AgentStatus::Answered => o.final_answer.clone(),
        AgentStatus::MaxTurns | AgentStatus::BudgetExhausted => o.last_response.clone(),
        AgentStatus::Error | AgentStatus::Timeout => None,
    }
}

/// A one-line description of why an outcome produced no answer.
pub fn failure_note(o: &AgentOutcome) -> String {
    let status = serde_json::to_value(o.status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    match &o.error {
        Some(e) => format!("failed: {status}: {e}"),
        None => format!("failed: {status}"),
    }
}

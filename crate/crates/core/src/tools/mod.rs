//! Tool registry following the Action / Execution / Observation pattern.
//!
//! [`ToolRegistry::invoke`] is total: unknown tools, handler errors, panics and
//! timeouts all come back as a well-formed `(Execution, Observation)` pair so
//! the agent loop can observe the failure and continue.

pub mod builtin;
pub mod mcp;
pub mod stub;
pub mod web;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use builtin::{register_builtins, BUILTIN_TOOLS};
pub use mcp::{McpClient, McpEndpoint, McpError, McpTransport};
pub use web::{FixtureWeb, SearchHit, WebBackend};

pub const TRUNCATION_MARKER: &str = "…[truncated]";
pub const DEFAULT_OUTPUT_CAP: usize = 16_384;
pub const DEFAULT_TIMEOUT_MS: u64 = 120_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolSource {
    Builtin,
    Mcp,
    Skill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Value,
    pub source: ToolSource,
}

impl ToolDescriptor {
    pub fn new(name: impl Into<String>, description: impl Into<String>, parameters: Value, source: ToolSource) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            parameters,
            source,
        }
    }

    /// Checks the name and the JSON-schema-style parameter object.
    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("tool name is empty".into());
        }
        if self.name.chars().any(char::is_whitespace) {
            return Err(format!("tool name `{}` contains whitespace", self.name));
        }
        let obj = self.parameters.as_object().ok_or("parameters must be a JSON object")?;
        if obj.get("type").and_then(Value::as_str) != Some("object") {
            return Err("parameters.type must be \"object\"".into());
        }
        let props = match obj.get("properties") {
            None => Map::new(),
            Some(Value::Object(p)) => p.clone(),
            Some(_) => return Err("parameters.properties must be an object".into()),
        };
        if let Some(required) = obj.get("required") {
            let list = required.as_array().ok_or("parameters.required must be an array")?;
            for r in list {
                let key = r.as_str().ok_or("parameters.required entries must be strings")?;
                if !props.contains_key(key) {
                    return Err(format!("required parameter `{key}` is not a declared property"));
                }
            }
        }
        Ok(())
    }

    /// Chat-completions function descriptor.
    pub fn wire_form(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }
}

/// Builds a parameter object with string properties, all required.
pub fn string_params(names: &[&str]) -> Value {
    let props: Map<String, Value> = names
        .iter()
        .map(|n| (n.to_string(), json!({"type": "string"})))
        .collect();
    json!({ "type": "object", "properties": props, "required": names })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub id: String,
    pub tool: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

impl Action {
    pub fn new(id: impl Into<String>, tool: impl Into<String>, arguments: Map<String, Value>) -> Self {
        Self {
            id: id.into(),
            tool: tool.into(),
            arguments,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Failed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub action_id: String,
    pub started_at: DateTime<Utc>,
    pub duration_ms: u64,
    pub status: ExecStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub action_id: String,
    pub content: String,
    pub truncated: bool,
    pub is_error: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolLimits {
    pub timeout_ms: u64,
    pub output_cap_chars: usize,
}

impl Default for ToolLimits {
    fn default() -> Self {
        Self {
            timeout_ms: DEFAULT_TIMEOUT_MS,
            output_cap_chars: DEFAULT_OUTPUT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("{0}")]
    Failed(String),
    #[error("timed out: {0}")]
    Timeout(String),
}

impl ToolError {
    pub fn failed(msg: impl Into<String>) -> Self {
        ToolError::Failed(msg.into())
    }
}

/// What a handler may rely on when it runs.
#[derive(Debug, Clone)]
pub struct ToolContext {
    pub workspace: PathBuf,
    pub timeout: Duration,
}

pub trait ToolHandler: Send + Sync {
    fn call(&self, arguments: &Map<String, Value>, ctx: &ToolContext) -> Result<String, ToolError>;
}

impl<F> ToolHandler for F
where
    F: Fn(&Map<String, Value>, &ToolContext) -> Result<String, ToolError> + Send + Sync,
{
    fn call(&self, arguments: &Map<String, Value>, ctx: &ToolContext) -> Result<String, ToolError> {
        self(arguments, ctx)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToolRegistryError {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
    #[error("invalid tool descriptor: {0}")]
    InvalidDescriptor(String),
}

struct RegisteredTool {
    descriptor: ToolDescriptor,
    handler: Arc<dyn ToolHandler>,
}

/// Name-ordered tool registry bound to one run's workspace directory.
pub struct ToolRegistry {
    tools: BTreeMap<String, RegisteredTool>,
    workspace: PathBuf,
}

impl ToolRegistry {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        Self {
            tools: BTreeMap::new(),
            workspace: workspace.into(),
        }
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    pub fn register_tool(
        &mut self,
        descriptor: ToolDescriptor,
        handler: impl ToolHandler + 'static,
    ) -> Result<(), ToolRegistryError> {
        self.register_shared(descriptor, Arc::new(handler))
    }

    pub fn register_shared(
        &mut self,
        descriptor: ToolDescriptor,
        handler: Arc<dyn ToolHandler>,
    ) -> Result<(), ToolRegistryError> {
        descriptor.validate().map_err(ToolRegistryError::InvalidDescriptor)?;
        if self.tools.contains_key(&descriptor.name) {
            return Err(ToolRegistryError::DuplicateTool(descriptor.name));
        }
        self.tools
            .insert(descriptor.name.clone(), RegisteredTool { descriptor, handler });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.keys().cloned().collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.get(name).map(|t| &t.descriptor)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.values().map(|t| &t.descriptor)
    }

    /// Wire descriptors for every registered tool, ordered by name.
    pub fn render_tool_schemas(&self) -> Vec<Value> {
        self.tools.values().map(|t| t.descriptor.wire_form()).collect()
    }

    /// Wire descriptors for the named subset, ordered by name. Unknown names
    /// are skipped.
    pub fn render_subset(&self, names: &[String]) -> Vec<Value> {
        self.tools
            .values()
            .filter(|t| names.iter().any(|n| n == &t.descriptor.name))
            .map(|t| t.descriptor.wire_form())
            .collect()
    }

    pub fn invoke(&self, action: &Action, limits: ToolLimits) -> (Execution, Observation) {
        match self.tools.get(&action.tool) {
            Some(tool) => {
                let ctx = ToolContext {
                    workspace: self.workspace.clone(),
                    timeout: Duration::from_millis(limits.timeout_ms),
                };
                execute(action, Arc::clone(&tool.handler), ctx, limits)
            }
            None => failed_pair(action, format!("unknown tool `{}`", action.tool)),
        }
    }
}

/// A failed pair for an action that never reached a handler.
pub fn failed_pair(action: &Action, message: impl Into<String>) -> (Execution, Observation) {
    (
        Execution {
            action_id: action.id.clone(),
            started_at: Utc::now(),
            duration_ms: 0,
            status: ExecStatus::Failed,
        },
        Observation {
            action_id: action.id.clone(),
            content: message.into(),
            truncated: false,
            is_error: true,
        },
    )
}

/// Runs `handler` on a worker thread, bounded by `limits.timeout_ms`.
pub fn execute(
    action: &Action,
    handler: Arc<dyn ToolHandler>,
    ctx: ToolContext,
    limits: ToolLimits,
) -> (Execution, Observation) {
    let started_at = Utc::now();
    let start = Instant::now();
    let (tx, rx) = mpsc::channel();
    let arguments = action.arguments.clone();
    let timeout = ctx.timeout;
    let spawned = std::thread::Builder::new()
        .name(format!("tool-{}", action.tool))
        .spawn(move || {
            let result = catch_unwind(AssertUnwindSafe(|| handler.call(&arguments, &ctx))).unwrap_or_else(|panic| {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                Err(ToolError::Failed(format!("tool panicked: {msg}")))
            });
            let _ = tx.send(result);
        });
    if let Err(e) = spawned {
        return failed_pair(action, format!("could not start tool thread: {e}"));
    }
    // Handlers that enforce their own timeout (exec) get a short grace period
    // so their own message wins the race.
    let result = match rx.recv_timeout(timeout + Duration::from_millis(20)) {
        Ok(r) => r,
        Err(mpsc::RecvTimeoutError::Timeout) => Err(ToolError::Timeout(format!(
            "tool `{}` timed out after {} ms",
            action.tool,
            timeout.as_millis()
        ))),
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            Err(ToolError::Failed("tool worker exited without a result".into()))
        }
    };
    let (status, raw) = match result {
        Ok(out) => (ExecStatus::Ok, out),
        Err(ToolError::Failed(msg)) => (ExecStatus::Failed, msg),
        Err(ToolError::Timeout(msg)) => (ExecStatus::Timeout, msg),
    };
    let (content, truncated) = truncate_output(&raw, limits.output_cap_chars);
    (
        Execution {
            action_id: action.id.clone(),
            started_at,
            duration_ms: start.elapsed().as_millis() as u64,
            status,
        },
        Observation {
            action_id: action.id.clone(),
            content,
            truncated,
            is_error: status != ExecStatus::Ok,
        },
    )
}

/// Caps `content` at `cap` characters, appending [`TRUNCATION_MARKER`] when
/// anything was cut.
pub fn truncate_output(content: &str, cap: usize) -> (String, bool) {
    match content.char_indices().nth(cap) {
        None => (content.to_string(), false),
        Some((byte, _)) => (format!("{}{TRUNCATION_MARKER}", &content[..byte]), true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn registry() -> ToolRegistry {
        ToolRegistry::new(std::env::temp_dir())
    }

    fn echo_descriptor(name: &str) -> ToolDescriptor {
        ToolDescriptor::new(name, "echo", string_params(&["text"]), ToolSource::Builtin)
    }

    fn echo(args: &Map<String, Value>, _: &ToolContext) -> Result<String, ToolError> {
        Ok(args.get("text").and_then(Value::as_str).unwrap_or_default().to_string())
    }

    #[test]
    fn register_list_and_duplicates() {
        let mut reg = registry();
        reg.register_tool(echo_descriptor("file_read"), echo).unwrap();
        assert_eq!(reg.names(), vec!["file_read"]);
        assert_eq!(
            reg.register_tool(echo_descriptor("file_read"), echo),
            Err(ToolRegistryError::DuplicateTool("file_read".into()))
        );
        assert!(matches!(
            reg.register_tool(echo_descriptor(""), echo),
            Err(ToolRegistryError::InvalidDescriptor(_))
        ));
    }

    #[test]
    fn malformed_parameters_are_rejected() {
        let bad = [
            json!([]),
            json!({"type": "string"}),
            json!({"type": "object", "properties": []}),
            json!({"type": "object", "properties": {}, "required": ["x"]}),
        ];
        for params in bad {
            let d = ToolDescriptor::new("t", "", params.clone(), ToolSource::Builtin);
            assert!(d.validate().is_err(), "{params}");
        }
    }

    #[test]
    fn schemas_are_sorted_by_name() {
        let mut reg = registry();
        assert!(reg.render_tool_schemas().is_empty());
        reg.register_tool(echo_descriptor("b"), echo).unwrap();
        reg.register_tool(echo_descriptor("a"), echo).unwrap();
        let names: Vec<_> = reg
            .render_tool_schemas()
            .iter()
            .map(|v| v["function"]["name"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn unknown_tool_is_an_observation() {
        let reg = registry();
        let (exec, obs) = reg.invoke(&Action::new("a1", "no_such_tool", Map::new()), ToolLimits::default());
        assert_eq!(exec.status, ExecStatus::Failed);
        assert!(obs.is_error);
        assert!(obs.content.contains("unknown tool"));
        assert_eq!(exec.action_id, obs.action_id);
    }

    #[test]
    fn panics_and_errors_are_captured() {
        let mut reg = registry();
        reg.register_tool(
            echo_descriptor("boom"),
            |_: &Map<String, Value>, _: &ToolContext| -> Result<String, ToolError> { panic!("kaput") },
        )
        .unwrap();
        reg.register_tool(echo_descriptor("nope"), |_: &Map<String, Value>, _: &ToolContext| {
            Err(ToolError::failed("bad input"))
        })
        .unwrap();
        let (e, o) = reg.invoke(&Action::new("1", "boom", Map::new()), ToolLimits::default());
        assert_eq!(e.status, ExecStatus::Failed);
        assert!(o.content.contains("kaput"));
        let (e, o) = reg.invoke(&Action::new("2", "nope", Map::new()), ToolLimits::default());
        assert_eq!(e.status, ExecStatus::Failed);
        assert_eq!(o.content, "bad input");
    }

    #[test]
    fn slow_handler_times_out() {
        let mut reg = registry();
        reg.register_tool(echo_descriptor("slow"), |_: &Map<String, Value>, _: &ToolContext| {
            std::thread::sleep(Duration::from_secs(5));
            Ok(String::new())
        })
        .unwrap();
        let start = Instant::now();
        let limits = ToolLimits {
            timeout_ms: 100,
            ..Default::default()
        };
        let (e, o) = reg.invoke(&Action::new("1", "slow", Map::new()), limits);
        assert_eq!(e.status, ExecStatus::Timeout);
        assert!(o.is_error);
        assert!(start.elapsed() < Duration::from_millis(400));
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_output("abc", 3), ("abc".into(), false));
        assert_eq!(truncate_output("abcd", 3), (format!("abc{TRUNCATION_MARKER}"), true));
        assert_eq!(truncate_output("ééé", 1), (format!("é{TRUNCATION_MARKER}"), true));
    }

    proptest! {
        #[test]
        fn truncation_bound(content in ".{0,200}", cap in 0usize..150) {
            let len = content.chars().count();
            let (out, truncated) = truncate_output(&content, cap);
            prop_assert_eq!(truncated, len > cap);
            prop_assert!(out.chars().count() <= cap + TRUNCATION_MARKER.chars().count());
            if truncated {
                prop_assert_eq!(out.chars().count(), cap + TRUNCATION_MARKER.chars().count());
            } else {
                prop_assert_eq!(out, content);
            }
        }
    }
}

//! Model Context Protocol client.
//!
//! Speaks JSON-RPC 2.0 (`initialize`, `tools/list`, `tools/call`) over HTTP or
//! a stdio subprocess and turns remote tools into native registry entries.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{
    execute, Action, Execution, Observation, ToolContext, ToolDescriptor, ToolError, ToolLimits, ToolRegistry,
    ToolSource,
};

pub const PROTOCOL_VERSION: &str = "2025-06-18";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McpTransport {
    Http,
    Stdio,
}

/// `endpoint` is a URL for HTTP, or a whitespace-separated command line for
/// stdio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McpEndpoint {
    pub alias: String,
    pub transport: McpTransport,
    pub endpoint: String,
}

impl McpEndpoint {
    pub fn http(alias: impl Into<String>, url: impl Into<String>) -> Self {
        Self {
            alias: alias.into(),
            transport: McpTransport::Http,
            endpoint: url.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum McpError {
    #[error("MCP transport error ({alias}): {message}")]
    Transport { alias: String, message: String },
    #[error("MCP protocol error ({alias}): {message}")]
    Protocol { alias: String, message: String },
    #[error("MCP remote error {code}: {message}")]
    Remote { code: i64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteTool {
    pub name: String,
    pub description: String,
    pub input_schema: Value,
}

/// A remote tool as it appears natively, with the name the server knows it by.
#[derive(Debug, Clone, PartialEq)]
pub struct McpBinding {
    pub descriptor: ToolDescriptor,
    pub remote_name: String,
}

/// Longest wait for any single reply, on either transport.
const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

struct StdioConn {
    child: Child,
    stdin: ChildStdin,
    // Fed by a reader thread so a silent server cannot block us forever.
    lines: Receiver<String>,
}

fn spawn_reader(stdout: ChildStdout) -> Receiver<String> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines().map_while(Result::ok) {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

impl Drop for StdioConn {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Connection {
    Http { agent: ureq::Agent, url: String },
    Stdio(Mutex<StdioConn>),
}

pub struct McpClient {
    endpoint: McpEndpoint,
    conn: Connection,
    next_id: AtomicU64,
}

impl McpClient {
    /// Opens the transport and performs the `initialize` handshake.
    pub fn connect(endpoint: &McpEndpoint) -> Result<Self, McpError> {
        let conn = match endpoint.transport {
            McpTransport::Http => {
                let config = ureq::Agent::config_builder()
                    .http_status_as_error(false)
                    .timeout_global(Some(REQUEST_TIMEOUT))
                    .build();
                Connection::Http {
                    agent: config.into(),
                    url: endpoint.endpoint.clone(),
                }
            }
            McpTransport::Stdio => {
                let mut parts = endpoint.endpoint.split_whitespace();
                let program = parts.next().ok_or_else(|| McpError::Transport {
                    alias: endpoint.alias.clone(),
                    message: "empty stdio command".into(),
                })?;
                let mut child = Command::new(program)
                    .args(parts)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::null())
                    .spawn()
                    .map_err(|e| McpError::Transport {
                        alias: endpoint.alias.clone(),
                        message: format!("cannot spawn `{}`: {e}", endpoint.endpoint),
                    })?;
                let stdin = child.stdin.take().expect("piped stdin");
                let lines = spawn_reader(child.stdout.take().expect("piped stdout"));
                Connection::Stdio(Mutex::new(StdioConn { child, stdin, lines }))
            }
        };
        let client = Self {
            endpoint: endpoint.clone(),
            conn,
            next_id: AtomicU64::new(1),
        };
        client.request(
            "initialize",
            json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {},
                "clientInfo": {"name": "evo", "version": env!("CARGO_PKG_VERSION")},
            }),
        )?;
        client.notify("notifications/initialized")?;
        Ok(client)
    }

    pub fn endpoint(&self) -> &McpEndpoint {
        &self.endpoint
    }

    fn transport_err(&self, message: impl Into<String>) -> McpError {
        McpError::Transport {
            alias: self.endpoint.alias.clone(),
            message: message.into(),
        }
    }

    fn protocol_err(&self, message: impl Into<String>) -> McpError {
        McpError::Protocol {
            alias: self.endpoint.alias.clone(),
            message: message.into(),
        }
    }

    fn notify(&self, method: &str) -> Result<(), McpError> {
        let msg = json!({"jsonrpc": "2.0", "method": method});
        match &self.conn {
            Connection::Http { agent, url } => {
                agent
                    .post(url)
                    .header("Accept", "application/json, text/event-stream")
                    .send_json(&msg)
                    .map_err(|e| self.transport_err(e.to_string()))?;
            }
            Connection::Stdio(conn) => {
                let mut conn = conn.lock().expect("mcp stdio lock");
                writeln!(conn.stdin, "{msg}").map_err(|e| self.transport_err(e.to_string()))?;
                conn.stdin.flush().map_err(|e| self.transport_err(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// One JSON-RPC round trip; returns the `result` member.
    pub fn request(&self, method: &str, params: Value) -> Result<Value, McpError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let msg = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let reply = match &self.conn {
            Connection::Http { agent, url } => {
                let mut resp = agent
                    .post(url)
                    .header("Accept", "application/json, text/event-stream")
                    .send_json(&msg)
                    .map_err(|e| self.transport_err(e.to_string()))?;
                let status = resp.status().as_u16();
                let is_sse = resp
                    .headers()
                    .get("content-type")
                    .and_then(|v| v.to_str().ok())
                    .is_some_and(|v| v.starts_with("text/event-stream"));
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| self.transport_err(e.to_string()))?;
                if !(200..300).contains(&status) {
                    return Err(self.transport_err(format!("HTTP {status}: {body}")));
                }
                if is_sse {
                    body.lines()
                        .filter_map(|l| l.strip_prefix("data:"))
                        .filter_map(|d| serde_json::from_str::<Value>(d.trim()).ok())
                        .find(|v| v.get("id") == Some(&json!(id)))
                        .ok_or_else(|| self.protocol_err("no response in event stream"))?
                } else {
                    serde_json::from_str(&body).map_err(|e| self.protocol_err(format!("invalid JSON: {e}")))?
                }
            }
            Connection::Stdio(conn) => {
                let mut conn = conn.lock().expect("mcp stdio lock");
                writeln!(conn.stdin, "{msg}").map_err(|e| self.transport_err(e.to_string()))?;
                conn.stdin.flush().map_err(|e| self.transport_err(e.to_string()))?;
                loop {
                    let line = match conn.lines.recv_timeout(REQUEST_TIMEOUT) {
                        Ok(line) => line,
                        Err(RecvTimeoutError::Timeout) => {
                            return Err(self.transport_err(format!(
                                "no reply to `{method}` within {}s",
                                REQUEST_TIMEOUT.as_secs()
                            )))
                        }
                        Err(RecvTimeoutError::Disconnected) => return Err(self.transport_err("server closed stdout")),
                    };
                    let value: Value = match serde_json::from_str(line.trim()) {
                        Ok(v) => v,
                        Err(_) => continue,
                    };
                    if value.get("id") == Some(&json!(id)) {
                        break value;
                    }
                }
            }
        };
        if let Some(err) = reply.get("error") {
            return Err(McpError::Remote {
                code: err.get("code").and_then(Value::as_i64).unwrap_or(0),
                message: err
                    .get("message")
                    .and_then(Value::as_str)
                    .unwrap_or("unspecified error")
                    .to_string(),
            });
        }
        reply
            .get("result")
            .cloned()
            .ok_or_else(|| self.protocol_err("response has neither result nor error"))
    }

    pub fn list_tools(&self) -> Result<Vec<RemoteTool>, McpError> {
        let result = self.request("tools/list", json!({}))?;
        let tools = result
            .get("tools")
            .and_then(Value::as_array)
            .ok_or_else(|| self.protocol_err("tools/list result has no `tools` array"))?;
        tools
            .iter()
            .map(|t| {
                let name = t
                    .get("name")
                    .and_then(Value::as_str)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| self.protocol_err(format!("tool entry without name: {t}")))?;
                let input_schema = match t.get("inputSchema") {
                    None | Some(Value::Null) => json!({"type": "object"}),
                    Some(s @ Value::Object(_)) => s.clone(),
                    Some(other) => return Err(self.protocol_err(format!("tool `{name}` has inputSchema {other}"))),
                };
                Ok(RemoteTool {
                    name: name.to_string(),
                    description: t
                        .get("description")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                    input_schema,
                })
            })
            .collect()
    }

    /// Native descriptors for the remote listing. A remote name that collides
    /// with a tool already in `existing` becomes `<alias>.<name>`.
    pub fn list_descriptors(&self, existing: &ToolRegistry) -> Result<Vec<McpBinding>, McpError> {
        let mut out = Vec::new();
        for remote in self.list_tools()? {
            let name = if existing.contains(&remote.name) {
                format!("{}.{}", self.endpoint.alias, remote.name)
            } else {
                remote.name.clone()
            };
            let descriptor = ToolDescriptor::new(name, remote.description, remote.input_schema, ToolSource::Mcp);
            descriptor
                .validate()
                .map_err(|e| self.protocol_err(format!("tool `{}`: {e}", remote.name)))?;
            out.push(McpBinding {
                descriptor,
                remote_name: remote.name,
            });
        }
        Ok(out)
    }

    /// Calls a remote tool by its server-side name.
    pub fn call_tool(&self, remote_name: &str, arguments: &Map<String, Value>) -> Result<String, ToolError> {
        let result = self
            .request("tools/call", json!({"name": remote_name, "arguments": arguments}))
            .map_err(|e| ToolError::Failed(e.to_string()))?;
        let text = result
            .get("content")
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter(|i| i.get("type").and_then(Value::as_str) == Some("text"))
                    .filter_map(|i| i.get("text").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .ok_or_else(|| ToolError::Failed(format!("malformed tools/call result: {result}")))?;
        if result.get("isError").and_then(Value::as_bool).unwrap_or(false) {
            Err(ToolError::Failed(text))
        } else {
            Ok(text)
        }
    }

    /// Invokes `action.tool` (a remote name) and materializes the pair.
    pub fn invoke(self: &Arc<Self>, action: &Action, limits: ToolLimits) -> (Execution, Observation) {
        let client = Arc::clone(self);
        let remote = action.tool.clone();
        let handler = Arc::new(move |args: &Map<String, Value>, _: &ToolContext| client.call_tool(&remote, args));
        let ctx = ToolContext {
            workspace: std::env::temp_dir(),
            timeout: Duration::from_millis(limits.timeout_ms),
        };
        execute(action, handler, ctx, limits)
    }

    /// Lists the endpoint and registers every remote tool into `registry`.
    pub fn register_into(self: &Arc<Self>, registry: &mut ToolRegistry) -> Result<Vec<ToolDescriptor>, McpError> {
        let bindings = self.list_descriptors(registry)?;
        let mut registered = Vec::with_capacity(bindings.len());
        for binding in bindings {
            let client = Arc::clone(self);
            let remote = binding.remote_name.clone();
            registry
                .register_tool(
                    binding.descriptor.clone(),
                    move |args: &Map<String, Value>, _: &ToolContext| client.call_tool(&remote, args),
                )
                .map_err(|e| self.protocol_err(e.to_string()))?;
            registered.push(binding.descriptor);
        }
        Ok(registered)
    }
}

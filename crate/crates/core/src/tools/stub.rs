//! Stub MCP server used by the test suite and `evo-mcp-stub`.
//!
//! Exposes three tools:
//! - `add {a, b}` returns the sum as text,
//! - `lookup {key}` returns an entry from a fixed table (unknown key is a tool error),
//! - `exec {cmd}` echoes the command, deliberately colliding with the builtin.
//!
//! Missing arguments are JSON-RPC errors (`-32602`).

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

const LOOKUP_TABLE: [(&str, &str); 3] = [
    ("alpha", "first letter of the Greek alphabet"),
    ("evo", "evolving agents"),
    ("pi", "3.14159"),
];

/// The listing the stub returns for `tools/list`.
pub fn tool_listing() -> Value {
    json!([
        {
            "name": "add",
            "description": "Add two numbers.",
            "inputSchema": {
                "type": "object",
                "properties": {"a": {"type": "number"}, "b": {"type": "number"}},
                "required": ["a", "b"]
            }
        },
        {
            "name": "lookup",
            "description": "Look up a key in a fixed table.",
            "inputSchema": {
                "type": "object",
                "properties": {"key": {"type": "string"}},
                "required": ["key"]
            }
        },
        {
            "name": "exec",
            "description": "Echo a command without running it.",
            "inputSchema": {
                "type": "object",
                "properties": {"cmd": {"type": "string"}},
                "required": ["cmd"]
            }
        }
    ])
}

fn rpc_error(id: &Value, code: i64, message: impl Into<String>) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message.into()}})
}

fn text_result(id: &Value, text: impl Into<String>, is_error: bool) -> Value {
    json!({
        "jsonrpc": "2.0",
        "id": id,
        "result": {"content": [{"type": "text", "text": text.into()}], "isError": is_error}
    })
}

fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Computes what a direct call of the stub tool returns: `Ok(text)`,
/// `Err((code, message))` for protocol errors, or `Ok` text flagged as a tool
/// error via the boolean.
pub fn call(name: &str, args: &serde_json::Map<String, Value>) -> Result<(String, bool), (i64, String)> {
    let num = |k: &str| -> Result<f64, (i64, String)> {
        match args.get(k) {
            Some(v) => v
                .as_f64()
                .ok_or_else(|| (-32602, format!("argument `{k}` must be a number"))),
            None => Err((-32602, format!("missing required argument `{k}`"))),
        }
    };
    let string = |k: &str| -> Result<String, (i64, String)> {
        match args.get(k) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err((-32602, format!("argument `{k}` must be a string"))),
            None => Err((-32602, format!("missing required argument `{k}`"))),
        }
    };
    match name {
        "add" => Ok((format_number(num("a")? + num("b")?), false)),
        "lookup" => {
            let key = string("key")?;
            Ok(match LOOKUP_TABLE.iter().find(|(k, _)| *k == key) {
                Some((_, v)) => (v.to_string(), false),
                None => (format!("no entry for `{key}`"), true),
            })
        }
        "exec" => Ok((format!("stub exec: {}", string("cmd")?), false)),
        other => Err((-32602, format!("unknown tool `{other}`"))),
    }
}

/// Dispatches one JSON-RPC message. Notifications yield `None`.
pub fn handle(message: &Value) -> Option<Value> {
    let id = message.get("id")?.clone();
    let method = message.get("method").and_then(Value::as_str).unwrap_or_default();
    Some(match method {
        "initialize" => json!({
            "jsonrpc": "2.0",
            "id": id,
            "result": {
                "protocolVersion": super::mcp::PROTOCOL_VERSION,
                "capabilities": {"tools": {}},
                "serverInfo": {"name": "evo-mcp-stub", "version": env!("CARGO_PKG_VERSION")}
            }
        }),
        "tools/list" => json!({"jsonrpc": "2.0", "id": id, "result": {"tools": tool_listing()}}),
        "tools/call" => {
            let params = message.get("params").cloned().unwrap_or(Value::Null);
            let name = params.get("name").and_then(Value::as_str).unwrap_or_default();
            let args = params
                .get("arguments")
                .and_then(Value::as_object)
                .cloned()
                .unwrap_or_default();
            match call(name, &args) {
                Ok((text, is_error)) => text_result(&id, text, is_error),
                Err((code, msg)) => rpc_error(&id, code, msg),
            }
        }
        other => rpc_error(&id, -32601, format!("method not found: {other}")),
    })
}

/// Serves newline-delimited JSON-RPC on the given streams until EOF.
pub fn serve_stdio(input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(msg) => handle(&msg),
            Err(e) => Some(rpc_error(&Value::Null, -32700, format!("parse error: {e}"))),
        };
        if let Some(reply) = reply {
            writeln!(output, "{reply}")?;
            output.flush()?;
        }
    }
    Ok(())
}

/// Minimal HTTP/1.1 server answering JSON-RPC POSTs on any path.
pub struct McpStubServer {
    addr: SocketAddr,
    stopped: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl McpStubServer {
    pub fn start() -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0")
    }

    pub fn bind(addr: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stopped = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stopped);
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let flag = Arc::clone(&flag);
                    std::thread::spawn(move || {
                        let _ = serve_connection(stream, &flag);
                    });
                }
            }
        });
        Ok(Self {
            addr,
            stopped,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/mcp", self.addr)
    }

    /// Stops accepting connections. Later calls see a refused connection.
    pub fn stop(&mut self) {
        if self.stopped.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for McpStubServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_connection(stream: TcpStream, stopped: &AtomicBool) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line)? == 0 {
            return Ok(());
        }
        let mut content_length = 0usize;
        let mut keep_alive = true;
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header)? == 0 {
                return Ok(());
            }
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((k, v)) = header.split_once(':') {
                let k = k.trim().to_ascii_lowercase();
                let v = v.trim();
                if k == "content-length" {
                    content_length = v.parse().unwrap_or(0);
                } else if k == "connection" && v.eq_ignore_ascii_case("close") {
                    keep_alive = false;
                }
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        if stopped.load(Ordering::SeqCst) {
            return Ok(());
        }

        let (status, payload) = if !request_line.starts_with("POST") {
            ("405 Method Not Allowed", String::new())
        } else {
            match serde_json::from_slice::<Value>(&body) {
                Ok(msg) => match handle(&msg) {
                    Some(reply) => ("200 OK", reply.to_string()),
                    None => ("202 Accepted", String::new()),
                },
                Err(e) => (
                    "200 OK",
                    rpc_error(&Value::Null, -32700, format!("parse error: {e}")).to_string(),
                ),
            }
        };
        write!(
            writer,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n{}\r\n{payload}",
            payload.len(),
            if keep_alive { "" } else { "Connection: close\r\n" }
        )?;
        writer.flush()?;
        if !keep_alive {
            return Ok(());
        }
    }
}

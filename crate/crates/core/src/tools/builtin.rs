//! Built-in tools: workspace file I/O, subprocess execution, web retrieval
//! and a text passthrough standing in for PDF extraction.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{Map, Value};

use super::{
    string_params, ToolContext, ToolDescriptor, ToolError, ToolRegistry, ToolRegistryError, ToolSource, WebBackend,
};

pub const BUILTIN_TOOLS: [&str; 6] = [
    "exec",
    "file_read",
    "file_write",
    "pdf_extract",
    "web_fetch",
    "web_search",
];

const SEARCH_LIMIT: usize = 5;

pub fn descriptor(name: &str) -> Option<ToolDescriptor> {
    let (description, params) = match name {
        "exec" => (
            "Run a shell command in the run workspace and return its output.",
            string_params(&["cmd"]),
        ),
        "file_read" => ("Read a text file from the run workspace.", string_params(&["path"])),
        "file_write" => (
            "Write a text file inside the run workspace.",
            string_params(&["path", "content"]),
        ),
        "web_fetch" => ("Fetch the text of a URL.", string_params(&["url"])),
        "web_search" => ("Search the web and return the top results.", string_params(&["query"])),
        "pdf_extract" => (
            "Extract the text of a document given a workspace path or URL.",
            string_params(&["source"]),
        ),
        _ => return None,
    };
    Some(ToolDescriptor::new(name, description, params, ToolSource::Builtin))
}

/// Registers the named built-ins. An unknown name is reported as an invalid
/// descriptor.
pub fn register_builtins(
    registry: &mut ToolRegistry,
    names: &[String],
    web: Arc<dyn WebBackend>,
) -> Result<(), ToolRegistryError> {
    for name in names {
        let d = descriptor(name)
            .ok_or_else(|| ToolRegistryError::InvalidDescriptor(format!("unknown builtin tool `{name}`")))?;
        match name.as_str() {
            "exec" => registry.register_tool(d, exec)?,
            "file_read" => registry.register_tool(d, file_read)?,
            "file_write" => registry.register_tool(d, file_write)?,
            "web_fetch" => {
                let web = Arc::clone(&web);
                registry.register_tool(d, move |args: &Map<String, Value>, _: &ToolContext| {
                    web.fetch(str_arg(args, "url")?).map_err(ToolError::Failed)
                })?
            }
            "web_search" => {
                let web = Arc::clone(&web);
                registry.register_tool(d, move |args: &Map<String, Value>, _: &ToolContext| {
                    let hits = web
                        .search(str_arg(args, "query")?, SEARCH_LIMIT)
                        .map_err(ToolError::Failed)?;
                    if hits.is_empty() {
                        return Ok("no results".into());
                    }
                    Ok(hits
                        .iter()
                        .enumerate()
                        .map(|(i, h)| format!("[{}] {}: {}\n{}", i + 1, h.title, h.url, h.snippet))
                        .collect::<Vec<_>>()
                        .join("\n"))
                })?
            }
            "pdf_extract" => {
                let web = Arc::clone(&web);
                registry.register_tool(d, move |args: &Map<String, Value>, ctx: &ToolContext| {
                    let source = str_arg(args, "source")?;
                    if source.starts_with("http://") || source.starts_with("https://") {
                        web.fetch(source).map_err(ToolError::Failed)
                    } else {
                        read_in_workspace(&ctx.workspace, source)
                    }
                })?
            }
            _ => unreachable!("descriptor() covers every builtin"),
        }
    }
    Ok(())
}

pub(crate) fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, ToolError> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(ToolError::failed(format!(
            "argument `{key}` must be a string, got {other}"
        ))),
        None => Err(ToolError::failed(format!("missing required argument `{key}`"))),
    }
}

/// Resolves `relative` inside `root`, rejecting absolute paths and any path
/// that climbs above the root.
pub fn confine(root: &Path, relative: &str) -> Result<PathBuf, ToolError> {
    let rel = Path::new(relative);
    let mut out = root.to_path_buf();
    let mut depth = 0usize;
    for comp in rel.components() {
        match comp {
            Component::Normal(part) => {
                out.push(part);
                depth += 1;
            }
            Component::CurDir => {}
            Component::ParentDir if depth > 0 => {
                out.pop();
                depth -= 1;
            }
            _ => return Err(ToolError::failed(format!("path `{relative}` escapes the workspace"))),
        }
    }
    if depth == 0 {
        return Err(ToolError::failed(format!("path `{relative}` names the workspace root")));
    }
    Ok(out)
}

fn read_in_workspace(workspace: &Path, path: &str) -> Result<String, ToolError> {
    let full = confine(workspace, path)?;
    std::fs::read_to_string(&full).map_err(|e| ToolError::failed(format!("cannot read `{path}`: {e}")))
}

fn file_read(args: &Map<String, Value>, ctx: &ToolContext) -> Result<String, ToolError> {
    read_in_workspace(&ctx.workspace, str_arg(args, "path")?)
}

fn file_write(args: &Map<String, Value>, ctx: &ToolContext) -> Result<String, ToolError> {
    let path = str_arg(args, "path")?;
    let content = str_arg(args, "content")?;
    let full = confine(&ctx.workspace, path)?;
    if let Some(parent) = full.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ToolError::failed(format!("cannot create `{path}`: {e}")))?;
    }
    std::fs::write(&full, content).map_err(|e| ToolError::failed(format!("cannot write `{path}`: {e}")))?;
    Ok(format!("wrote {} bytes to {path}", content.len()))
}

fn exec(args: &Map<String, Value>, ctx: &ToolContext) -> Result<String, ToolError> {
    run_command(str_arg(args, "cmd")?, &ctx.workspace, ctx.timeout)
}

/// Runs `cmd` through `sh -c` in its own process group with a scrubbed
/// environment. On timeout the whole group is killed.
pub fn run_command(cmd: &str, cwd: &Path, timeout: Duration) -> Result<String, ToolError> {
    std::fs::create_dir_all(cwd).map_err(|e| ToolError::failed(format!("workspace unavailable: {e}")))?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(cwd)
        .env_clear()
        .env("PATH", std::env::var("PATH").unwrap_or_else(|_| "/usr/bin:/bin".into()))
        .env("HOME", cwd)
        .env("LANG", "C.UTF-8")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| ToolError::failed(format!("cannot spawn shell: {e}")))?;

    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                kill_group(child.id());
                let _ = child.wait();
                let _ = out_reader.join();
                let _ = err_reader.join();
                return Err(ToolError::Timeout(format!(
                    "command timed out after {} ms",
                    timeout.as_millis()
                )));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(ToolError::failed(format!("waiting for command: {e}"))),
        }
    };
    // Background children may keep the pipes open; the group is ours to reap.
    kill_group(child.id());
    let out = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let err = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    let mut combined = out;
    if !err.is_empty() {
        combined.push_str(&err);
    }
    if status.success() {
        Ok(combined)
    } else {
        let code = status.code().map(|c| c.to_string()).unwrap_or_else(|| "signal".into());
        Err(ToolError::Failed(format!("exit status {code}\n{combined}")))
    }
}

fn kill_group(pid: u32) {
    // SAFETY: kill(2) on a process group we created; failure (ESRCH) is benign.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

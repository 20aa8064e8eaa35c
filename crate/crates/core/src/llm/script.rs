//! Deterministic scripted model backend.
//!
//! A script is a JSON array of entries:
//!
//! ```json
//! [
//!   {"match": "FINAL", "content": "FINAL: {{input}}"},
//!   {"content": "", "tool_calls": [{"name": "exec", "arguments": {"cmd": "echo hi"}}]}
//! ]
//! ```
//!
//! Each conversation keeps its own cursor. A step picks the first entry at or
//! after the cursor whose `match` (if any) accepts the last non-assistant
//! message, then moves the cursor past it. Once no entry is left the last entry
//! repeats, so termination is always decided by the agent engine.
//!
//! `content` may reference `{{input}}` (the matched message) and `{{N}}`
//! (capture group `N` of `match`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use regex::{Captures, Regex};
use serde::Deserialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{ChatMessage, ChatResponse, Role, TokenUsage};
use crate::tools::Action;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed script{}: {reason}", path.as_ref().map(|p| format!(" {}", p.display())).unwrap_or_default())]
    Parse { path: Option<PathBuf>, reason: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCall {
    name: String,
    #[serde(default)]
    arguments: Map<String, Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    #[serde(default, rename = "match")]
    pattern: Option<String>,
    content: String,
    #[serde(default)]
    tool_calls: Vec<RawCall>,
}

#[derive(Debug)]
struct Entry {
    pattern: Option<Regex>,
    content: String,
    tool_calls: Vec<RawCall>,
}

#[derive(Debug)]
pub struct Script {
    entries: Vec<Entry>,
    cursors: Mutex<HashMap<String, usize>>,
}

fn template_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{(input|\d+)\}\}").expect("static regex"))
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ScriptError::Parse { reason, .. } => ScriptError::Parse {
                path: Some(path.to_path_buf()),
                reason,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let parse_err = |reason: String| ScriptError::Parse { path: None, reason };
        let raw: Vec<RawEntry> = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if raw.is_empty() {
            return Err(parse_err("script has no entries".into()));
        }
        let mut entries = Vec::with_capacity(raw.len());
        for (i, e) in raw.into_iter().enumerate() {
            let pattern = e
                .pattern
                .map(|p| Regex::new(&p))
                .transpose()
                .map_err(|err| parse_err(format!("entry {}: bad match regex: {err}", i + 1)))?;
            if let Some(call) = e.tool_calls.iter().find(|c| c.name.trim().is_empty()) {
                return Err(parse_err(format!(
                    "entry {}: tool call with empty name ({:?})",
                    i + 1,
                    call.arguments
                )));
            }
            entries.push(Entry {
                pattern,
                content: e.content,
                tool_calls: e.tool_calls,
            });
        }
        Ok(Self {
            entries,
            cursors: Mutex::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Current cursor of a conversation (0 if it never stepped).
    pub fn cursor(&self, conversation: &str) -> usize {
        self.cursors
            .lock()
            .expect("script cursor lock")
            .get(conversation)
            .copied()
            .unwrap_or(0)
    }

    /// Produces the next response for `conversation`.
    pub fn step(&self, conversation: &str, messages: &[ChatMessage]) -> ChatResponse {
        let input = messages
            .iter()
            .rev()
            .find(|m| m.role != Role::Assistant)
            .map(|m| m.content.as_str())
            .unwrap_or("");

        let mut cursors = self.cursors.lock().expect("script cursor lock");
        let cursor = cursors.entry(conversation.to_string()).or_insert(0);
        let found = (*cursor..self.entries.len()).find(|&i| match &self.entries[i].pattern {
            Some(re) => re.is_match(input),
            None => true,
        });
        let index = match found {
            Some(i) => {
                *cursor = i + 1;
                i
            }
            None => {
                *cursor = self.entries.len();
                self.entries.len() - 1
            }
        };
        let call_seq = *cursor;
        drop(cursors);

        let entry = &self.entries[index];
        let captures = entry.pattern.as_ref().and_then(|re| re.captures(input));
        let content = render_template(&entry.content, input, captures.as_ref());
        let tool_calls: Vec<Action> = entry
            .tool_calls
            .iter()
            .enumerate()
            .map(|(k, c)| Action::new(format!("call_{call_seq}_{k}"), c.name.clone(), c.arguments.clone()))
            .collect();

        let prompt_tokens = messages.iter().map(ChatMessage::estimated_tokens).sum();
        let reply = ChatMessage::assistant(content.clone(), tool_calls.clone());
        let usage = TokenUsage {
            prompt_tokens,
            completion_tokens: reply.estimated_tokens(),
        };
        ChatResponse::new(content, tool_calls, usage)
    }
}

fn render_template(template: &str, input: &str, captures: Option<&Captures<'_>>) -> String {
    template_regex()
        .replace_all(template, |caps: &Captures<'_>| {
            let key = &caps[1];
            if key == "input" {
                return input.to_string();
            }
            let group: usize = key.parse().unwrap_or(usize::MAX);
            captures
                .and_then(|c| c.get(group))
                .map(|m| m.as_str().to_string())
                .unwrap_or_default()
        })
        .into_owned()
}

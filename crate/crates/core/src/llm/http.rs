//! Chat-completions HTTP provider.

use std::time::Duration;

use serde_json::{json, Map, Value};

use super::{ChatMessage, ChatResponse, FinishReason, GatewayError, ModelProfile, Role, TokenUsage};
use crate::tools::Action;

const BODY_EXCERPT: usize = 512;

pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
}

impl HttpProvider {
    pub fn new(profile: &ModelProfile) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build();
        let base = profile.base_url.as_deref().unwrap_or_default().trim_end_matches('/');
        Self {
            agent: config.into(),
            endpoint: format!("{base}/chat/completions"),
        }
    }

    pub fn complete(
        &self,
        profile: &ModelProfile,
        messages: &[ChatMessage],
        tools: &[Value],
    ) -> Result<ChatResponse, GatewayError> {
        let api_key = match &profile.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| GatewayError::provider(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let body = request_body(profile, messages, tools);
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| GatewayError::provider(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::provider(format!("reading body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Provider {
                status: Some(status),
                message: excerpt(&text),
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| GatewayError::Provider {
            status: Some(status),
            message: format!("invalid JSON ({e}): {}", excerpt(&text)),
        })?;
        parse_response(&value).map_err(|message| GatewayError::Provider {
            status: Some(status),
            message,
        })
    }
}

fn excerpt(text: &str) -> String {
    text.chars().take(BODY_EXCERPT).collect()
}

pub(crate) fn request_body(profile: &ModelProfile, messages: &[ChatMessage], tools: &[Value]) -> Value {
    let messages: Vec<Value> = messages.iter().map(wire_message).collect();
    let mut body = json!({
        "model": profile.model,
        "messages": messages,
        "temperature": profile.temperature,
        "max_tokens": profile.max_output_tokens,
    });
    if !tools.is_empty() {
        body["tools"] = Value::Array(tools.to_vec());
    }
    body
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut out = json!({ "role": role, "content": m.content });
    if !m.tool_calls.is_empty() {
        out["tool_calls"] = m
            .tool_calls
            .iter()
            .map(|a| {
                json!({
                    "id": a.id,
                    "type": "function",
                    "function": {
                        "name": a.tool,
                        "arguments": Value::Object(a.arguments.clone()).to_string(),
                    }
                })
            })
            .collect();
    }
    if let Some(id) = &m.tool_call_id {
        out["tool_call_id"] = Value::String(id.clone());
    }
    out
}

pub(crate) fn parse_response(value: &Value) -> Result<ChatResponse, String> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or("response has no choices")?;
    let message = choice.get("message").ok_or("choice has no message")?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for (k, call) in calls.iter().enumerate() {
            let function = call.get("function").ok_or("tool call without function")?;
            let name = function
                .get("name")
                .and_then(Value::as_str)
                .ok_or("tool call without name")?;
            let arguments = match function.get("arguments") {
                Some(Value::String(raw)) if raw.trim().is_empty() => Map::new(),
                Some(Value::String(raw)) => match serde_json::from_str::<Value>(raw) {
                    Ok(Value::Object(map)) => map,
                    _ => return Err(format!("tool call `{name}` has non-object arguments")),
                },
                Some(Value::Object(map)) => map.clone(),
                None | Some(Value::Null) => Map::new(),
                Some(_) => return Err(format!("tool call `{name}` has non-object arguments")),
            };
            let id = call
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{k}"));
            tool_calls.push(Action::new(id, name, arguments));
        }
    }
    let usage = value.get("usage").map(|u| TokenUsage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    });
    let mut response = ChatResponse::new(content, tool_calls, usage.unwrap_or_default());
    if response.finish == FinishReason::Stop && choice.get("finish_reason").and_then(Value::as_str) == Some("length") {
        response.finish = FinishReason::Length;
    }
    Ok(response)
}

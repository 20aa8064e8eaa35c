//! Per-agent message history under a token budget.
//!
//! Entries are pinned (system prompt, task, skill metadata) or unpinned
//! (dialogue, critiques, summaries). Rendering keeps every pinned entry plus
//! the newest unpinned suffix that fits. Compression replaces the oldest half
//! of unpinned tokens with a model-written summary, or drops it outright under
//! the sliding-window strategy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{estimate_tokens, ChatMessage, ChatResponse, GatewayError, Role, TokenUsage};

/// Prompt sent with the transcript of the span being summarized.
pub fn summarize_prompt() -> &'static str {
    include_str!("../resources/summarize_prompt.txt").trim_end()
}

pub const DEFAULT_COMPRESS_AT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    System,
    Task,
    Dialogue,
    Summary,
    Critique,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub message: ChatMessage,
    pub pinned: bool,
    pub tokens: u64,
    pub kind: EntryKind,
}

impl ContextEntry {
    /// System and task entries are pinned; everything else is not.
    pub fn new(message: ChatMessage, kind: EntryKind) -> Self {
        let pinned = matches!(kind, EntryKind::System | EntryKind::Task);
        Self::with_pin(message, kind, pinned)
    }

    pub fn with_pin(message: ChatMessage, kind: EntryKind, pinned: bool) -> Self {
        let tokens = message.estimated_tokens();
        Self {
            message,
            pinned,
            tokens,
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionStrategy {
    Summarize,
    SlidingWindow,
}

fn default_compress_at() -> f64 {
    DEFAULT_COMPRESS_AT
}

fn default_strategy() -> CompressionStrategy {
    CompressionStrategy::Summarize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextBudget {
    pub max_tokens: u64,
    #[serde(default = "default_compress_at")]
    pub compress_at: f64,
    #[serde(default = "default_strategy")]
    pub strategy: CompressionStrategy,
}

impl Default for ContextBudget {
    fn default() -> Self {
        Self {
            max_tokens: 32_000,
            compress_at: DEFAULT_COMPRESS_AT,
            strategy: CompressionStrategy::Summarize,
        }
    }
}

impl ContextBudget {
    pub fn new(max_tokens: u64, compress_at: f64, strategy: CompressionStrategy) -> Self {
        Self {
            max_tokens,
            compress_at,
            strategy,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        if !(self.compress_at > 0.0 && self.compress_at <= 1.0) {
            return Err(format!("compress_at {} outside (0, 1]", self.compress_at));
        }
        Ok(())
    }

    fn threshold(&self) -> f64 {
        self.compress_at * self.max_tokens as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionEvent {
    pub strategy: CompressionStrategy,
    pub replaced_count: usize,
    pub summary_tokens: u64,
    pub before_tokens: u64,
    pub after_tokens: u64,
    /// Usage of the summarization call; zero for the sliding window.
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextUsage {
    pub total_tokens: u64,
    pub entry_count: usize,
    pub compression_count: usize,
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("context invariant violated: {0}")]
    InvariantViolation(String),
    #[error("pinned entries need {pinned} tokens but the budget is {max}")]
    PinnedOverflow { pinned: u64, max: u64 },
    #[error("summarization failed: {0}")]
    Provider(#[from] GatewayError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Context {
    entries: Vec<ContextEntry>,
    total: u64,
    compressions: usize,
}

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: ContextEntry) -> Result<(), ContextError> {
        if matches!(entry.kind, EntryKind::System | EntryKind::Task) && !entry.pinned {
            return Err(ContextError::InvariantViolation(format!(
                "{:?} entries must be pinned",
                entry.kind
            )));
        }
        if entry.tokens != entry.message.estimated_tokens() {
            return Err(ContextError::InvariantViolation(
                "token count does not match content".into(),
            ));
        }
        entry.message.validate().map_err(ContextError::InvariantViolation)?;
        self.total += entry.tokens;
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[ContextEntry] {
        &self.entries
    }

    pub fn usage(&self) -> ContextUsage {
        ContextUsage {
            total_tokens: self.total,
            entry_count: self.entries.len(),
            compression_count: self.compressions,
        }
    }

    pub fn pinned_tokens(&self) -> u64 {
        self.entries.iter().filter(|e| e.pinned).map(|e| e.tokens).sum()
    }

    /// Indices of the entries [`Context::render`] would emit.
    pub fn render_indices(&self, budget: &ContextBudget) -> Result<Vec<usize>, ContextError> {
        let pinned = self.pinned_tokens();
        if pinned > budget.max_tokens {
            return Err(ContextError::PinnedOverflow {
                pinned,
                max: budget.max_tokens,
            });
        }
        let room = budget.max_tokens - pinned;
        let mut used = 0u64;
        let mut start = self.entries.len();
        for (i, e) in self.entries.iter().enumerate().rev() {
            if e.pinned {
                continue;
            }
            if used + e.tokens > room {
                break;
            }
            used += e.tokens;
            start = i;
        }
        // A tool result whose call was cut off is dropped with it.
        while start < self.entries.len() {
            let e = &self.entries[start];
            if e.pinned || e.message.role != Role::Tool {
                break;
            }
            start += 1;
        }
        Ok(self
            .entries
            .iter()
            .enumerate()
            .filter(|(i, e)| e.pinned || *i >= start)
            .map(|(i, _)| i)
            .collect())
    }

    /// Pinned entries plus the newest unpinned suffix within `max_tokens`, in
    /// chronological order.
    pub fn render(&self, budget: &ContextBudget) -> Result<Vec<ChatMessage>, ContextError> {
        Ok(self
            .render_indices(budget)?
            .into_iter()
            .map(|i| self.entries[i].message.clone())
            .collect())
    }

    /// Whether pinned entries plus the newest unpinned entry fit the budget.
    pub fn minimal_fits(&self, budget: &ContextBudget) -> bool {
        let newest = self
            .entries
            .iter()
            .rev()
            .find(|e| !e.pinned)
            .map(|e| e.tokens)
            .unwrap_or(0);
        self.pinned_tokens() + newest <= budget.max_tokens
    }

    /// Indices of the oldest unpinned entries covering at least half of the
    /// unpinned tokens, extended so no tool result is split from its call.
    fn compression_span(&self) -> Vec<usize> {
        let unpinned: Vec<usize> = (0..self.entries.len()).filter(|&i| !self.entries[i].pinned).collect();
        let unpinned_total: u64 = unpinned.iter().map(|&i| self.entries[i].tokens).sum();
        if unpinned_total == 0 {
            return Vec::new();
        }
        let mut acc = 0u64;
        let mut take = 0usize;
        for &i in &unpinned {
            acc += self.entries[i].tokens;
            take += 1;
            if acc * 2 >= unpinned_total {
                break;
            }
        }
        while take < unpinned.len() && self.entries[unpinned[take]].message.role == Role::Tool {
            take += 1;
        }
        unpinned[..take].to_vec()
    }

    /// Compresses once if the running total has reached the trigger. On a
    /// summarizer error the history is left untouched.
    pub fn maybe_compress<F>(
        &mut self,
        budget: &ContextBudget,
        summarize: F,
    ) -> Result<Option<CompressionEvent>, ContextError>
    where
        F: FnOnce(&[ChatMessage]) -> Result<ChatResponse, GatewayError>,
    {
        if (self.total as f64) < budget.threshold() {
            return Ok(None);
        }
        let span = self.compression_span();
        if span.is_empty() {
            return Ok(None);
        }
        let span_tokens: u64 = span.iter().map(|&i| self.entries[i].tokens).sum();
        let before = self.total;

        let (summary, usage) = match budget.strategy {
            CompressionStrategy::SlidingWindow => (None, TokenUsage::default()),
            CompressionStrategy::Summarize => {
                let transcript = span
                    .iter()
                    .map(|&i| transcript_line(&self.entries[i].message))
                    .collect::<Vec<_>>()
                    .join("\n");
                let request = [ChatMessage::system(summarize_prompt()), ChatMessage::user(transcript)];
                let response = summarize(&request)?;
                let text = shrink_to(response.content.trim(), span_tokens.saturating_sub(1));
                let entry = (!text.is_empty()).then(|| ContextEntry::new(ChatMessage::user(text), EntryKind::Summary));
                (entry, response.usage)
            }
        };

        let summary_tokens = summary.as_ref().map(|e| e.tokens).unwrap_or(0);
        let first = span[0];
        let mut kept = Vec::with_capacity(self.entries.len() - span.len() + 1);
        let mut span_iter = span.iter().peekable();
        for (i, e) in std::mem::take(&mut self.entries).into_iter().enumerate() {
            if span_iter.peek() == Some(&&i) {
                span_iter.next();
                if i == first {
                    if let Some(s) = summary.clone() {
                        kept.push(s);
                    }
                }
                continue;
            }
            kept.push(e);
        }
        self.entries = kept;
        self.total = before - span_tokens + summary_tokens;
        self.compressions += 1;
        Ok(Some(CompressionEvent {
            strategy: budget.strategy,
            replaced_count: span.len(),
            summary_tokens,
            before_tokens: before,
            after_tokens: self.total,
            usage,
        }))
    }
}

fn transcript_line(m: &ChatMessage) -> String {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut line = format!("[{role}] {}", m.content);
    for call in &m.tool_calls {
        line.push_str(&format!(
            "\n[call {}] {}({})",
            call.id,
            call.tool,
            serde_json::Value::Object(call.arguments.clone())
        ));
    }
    line
}

/// Cuts `text` so its token estimate is at most `max_tokens`.
fn shrink_to(text: &str, max_tokens: u64) -> String {
    if estimate_tokens(text) <= max_tokens {
        return text.to_string();
    }
    text.chars().take((max_tokens * 4) as usize).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::Action;
    use proptest::prelude::*;

    fn dialogue(text: &str) -> ContextEntry {
        ContextEntry::new(ChatMessage::user(text), EntryKind::Dialogue)
    }

    fn summary_response(text: &str) -> Result<ChatResponse, GatewayError> {
        Ok(ChatResponse::new(
            text,
            vec![],
            TokenUsage {
                prompt_tokens: 5,
                completion_tokens: 1,
            },
        ))
    }

    #[test]
    fn append_and_usage() {
        let mut ctx = Context::new();
        assert_eq!(ctx.usage(), ContextUsage::default());
        ctx.append(ContextEntry::new(ChatMessage::system("sys prompt"), EntryKind::System))
            .unwrap();
        assert_eq!(ctx.usage().total_tokens, estimate_tokens("sys prompt"));
        let mut ctx = Context::new();
        ctx.append(dialogue("abcd")).unwrap();
        ctx.append(dialogue("abcd")).unwrap();
        assert_eq!(ctx.usage().total_tokens, 2);
        assert_eq!(ctx.usage().entry_count, 2);
    }

    #[test]
    fn unpinned_system_entry_rejected() {
        let mut ctx = Context::new();
        let entry = ContextEntry::with_pin(ChatMessage::system("s"), EntryKind::System, false);
        assert!(matches!(ctx.append(entry), Err(ContextError::InvariantViolation(_))));
        assert_eq!(ctx.usage().entry_count, 0);
    }

    #[test]
    fn insertion_order_is_preserved() {
        let mut ctx = Context::new();
        for t in ["one", "two", "three"] {
            ctx.append(dialogue(t)).unwrap();
        }
        let out: Vec<_> = ctx
            .render(&ContextBudget::default())
            .unwrap()
            .into_iter()
            .map(|m| m.content)
            .collect();
        assert_eq!(out, ["one", "two", "three"]);
    }

    #[test]
    fn pinned_overflow() {
        let mut ctx = Context::new();
        ctx.append(ContextEntry::new(
            ChatMessage::system("x".repeat(40)),
            EntryKind::System,
        ))
        .unwrap();
        let budget = ContextBudget::new(5, 0.8, CompressionStrategy::Summarize);
        assert!(matches!(
            ctx.render(&budget),
            Err(ContextError::PinnedOverflow { pinned: 10, max: 5 })
        ));
    }

    #[test]
    fn orphan_tool_result_is_not_rendered() {
        let mut ctx = Context::new();
        ctx.append(ContextEntry::new(ChatMessage::system("s"), EntryKind::System))
            .unwrap();
        let call = Action::new("c1", "exec", Default::default());
        ctx.append(ContextEntry::new(
            ChatMessage::assistant("x".repeat(40), vec![call]),
            EntryKind::Dialogue,
        ))
        .unwrap();
        ctx.append(ContextEntry::new(ChatMessage::tool("c1", "abcd"), EntryKind::Dialogue))
            .unwrap();
        ctx.append(dialogue("abcd")).unwrap();
        let budget = ContextBudget::new(4, 1.0, CompressionStrategy::Summarize);
        let out = ctx.render(&budget).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].role, Role::User);
    }

    fn ten_dialogue() -> Context {
        let mut ctx = Context::new();
        ctx.append(ContextEntry::new(ChatMessage::system("sys"), EntryKind::System))
            .unwrap();
        for i in 0..10 {
            ctx.append(dialogue(&format!("turn {i:02} ....."))).unwrap();
        }
        ctx
    }

    #[test]
    fn below_threshold_is_a_no_op() {
        let mut ctx = ten_dialogue();
        let before = ctx.clone();
        let budget = ContextBudget::new(1000, 0.8, CompressionStrategy::Summarize);
        let ev = ctx.maybe_compress(&budget, |_| panic!("no call expected")).unwrap();
        assert!(ev.is_none());
        assert_eq!(ctx, before);
    }

    #[test]
    fn summarize_replaces_oldest_half() {
        let mut ctx = ten_dialogue();
        let budget = ContextBudget::new(40, 0.8, CompressionStrategy::Summarize);
        let mut seen = Vec::new();
        let ev = ctx
            .maybe_compress(&budget, |msgs| {
                seen = msgs.to_vec();
                summary_response("SUMMARY-1")
            })
            .unwrap()
            .unwrap();
        assert_eq!(ev.replaced_count, 5);
        assert!(ev.after_tokens < ev.before_tokens);
        assert_eq!(seen[0].content, summarize_prompt());
        assert!(seen[1].content.contains("turn 04") && !seen[1].content.contains("turn 05"));
        let entries = ctx.entries();
        assert_eq!(entries[1].kind, EntryKind::Summary);
        assert_eq!(entries[1].message.content, "SUMMARY-1");
        assert!(!entries[1].pinned);
        assert_eq!(entries[2].message.content, "turn 05 .....");
        assert_eq!(ctx.usage().compression_count, 1);
    }

    #[test]
    fn sliding_window_drops_without_call() {
        let mut ctx = ten_dialogue();
        let budget = ContextBudget::new(40, 0.8, CompressionStrategy::SlidingWindow);
        let ev = ctx
            .maybe_compress(&budget, |_| panic!("no model call"))
            .unwrap()
            .unwrap();
        assert_eq!(ev.replaced_count, 5);
        assert_eq!(ev.summary_tokens, 0);
        assert!(ev.usage.is_zero());
        assert_eq!(ctx.usage().entry_count, 6);
    }

    #[test]
    fn provider_error_leaves_history() {
        let mut ctx = ten_dialogue();
        let before = ctx.clone();
        let budget = ContextBudget::new(40, 0.8, CompressionStrategy::Summarize);
        let err = ctx.maybe_compress(&budget, |_| Err(GatewayError::provider("down")));
        assert!(matches!(err, Err(ContextError::Provider(_))));
        assert_eq!(ctx, before);
    }

    #[test]
    fn span_keeps_call_and_result_together() {
        let mut ctx = Context::new();
        ctx.append(ContextEntry::new(ChatMessage::system("s"), EntryKind::System))
            .unwrap();
        let call = Action::new("c1", "exec", Default::default());
        ctx.append(ContextEntry::new(
            ChatMessage::assistant("x".repeat(40), vec![call]),
            EntryKind::Dialogue,
        ))
        .unwrap();
        ctx.append(ContextEntry::new(ChatMessage::tool("c1", "out"), EntryKind::Dialogue))
            .unwrap();
        ctx.append(dialogue(&"y".repeat(40))).unwrap();
        let budget = ContextBudget::new(10, 0.5, CompressionStrategy::SlidingWindow);
        let ev = ctx.maybe_compress(&budget, |_| unreachable!()).unwrap().unwrap();
        assert_eq!(ev.replaced_count, 2);
        assert!(ctx.entries().iter().all(|e| e.message.role != Role::Tool));
    }

    #[test]
    fn oversized_summary_is_shrunk() {
        let mut ctx = ten_dialogue();
        let budget = ContextBudget::new(40, 0.8, CompressionStrategy::Summarize);
        let long = "z".repeat(10_000);
        let ev = ctx
            .maybe_compress(&budget, |_| summary_response(&long))
            .unwrap()
            .unwrap();
        assert!(ev.after_tokens < ev.before_tokens);
    }

    /// Brute-force reference: the longest contiguous newest suffix of unpinned
    /// entries whose token sum fits next to the pinned ones.
    fn oracle_render(tokens: &[(u64, bool)], max: u64) -> Option<Vec<usize>> {
        let pinned: u64 = tokens.iter().filter(|t| t.1).map(|t| t.0).sum();
        if pinned > max {
            return None;
        }
        let unpinned: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].1).collect();
        let mut best = unpinned.len();
        for start in (0..=unpinned.len()).rev() {
            let sum: u64 = unpinned[start..].iter().map(|&i| tokens[i].0).sum();
            if pinned + sum <= max {
                best = start;
            }
        }
        let keep: Vec<usize> = unpinned[best..].to_vec();
        Some((0..tokens.len()).filter(|i| tokens[*i].1 || keep.contains(i)).collect())
    }

    #[test]
    fn render_drops_exactly_two_oldest() {
        let texts = [
            "p".repeat(8),
            "a".repeat(12),
            "b".repeat(8),
            "c".repeat(8),
            "d".repeat(4),
            "e".repeat(4),
        ];
        let mut ctx = Context::new();
        ctx.append(ContextEntry::new(
            ChatMessage::system(texts[0].clone()),
            EntryKind::System,
        ))
        .unwrap();
        for t in &texts[1..] {
            ctx.append(dialogue(t)).unwrap();
        }
        let shape: Vec<(u64, bool)> = ctx.entries().iter().map(|e| (e.tokens, e.pinned)).collect();
        let budget = ContextBudget::new(7, 1.0, CompressionStrategy::Summarize);
        let expected = oracle_render(&shape, 7).unwrap();
        assert_eq!(expected, vec![0, 3, 4, 5]);
        assert_eq!(ctx.render_indices(&budget).unwrap(), expected);
    }

    proptest! {
        #[test]
        fn render_matches_oracle(
            shape in proptest::collection::vec((0u64..20, any::<bool>()), 0..12),
            max in 1u64..80,
        ) {
            let mut ctx = Context::new();
            for (tokens, pinned) in &shape {
                let text = "x".repeat((*tokens * 4) as usize);
                let kind = if *pinned { EntryKind::Task } else { EntryKind::Dialogue };
                ctx.append(ContextEntry::with_pin(ChatMessage::user(text), kind, *pinned)).unwrap();
            }
            let budget = ContextBudget::new(max, 1.0, CompressionStrategy::Summarize);
            match oracle_render(&shape, max) {
                None => prop_assert!(ctx.render_indices(&budget).is_err()),
                Some(expected) => prop_assert_eq!(ctx.render_indices(&budget).unwrap(), expected),
            }
        }
    }
}

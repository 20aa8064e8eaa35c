//! Offline verification of a recorded trajectory.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{EventKind, TrajectoryEvent};
use crate::llm::TokenUsage;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read trajectory: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory corrupt at line {line}: {reason}")]
    TrajectoryCorrupt { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub complete: bool,
    pub violations: Vec<String>,
    pub event_count: usize,
    /// Reconstructed dialogue per agent, one line per turn, tool call,
    /// observation and critique.
    pub transcripts: BTreeMap<String, Vec<String>>,
}

pub fn replay(path: &Path) -> Result<ReplayReport, ReplayError> {
    replay_str(&std::fs::read_to_string(path)?)
}

pub fn replay_str(text: &str) -> Result<ReplayReport, ReplayError> {
    let mut events = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        let event: TrajectoryEvent = serde_json::from_str(line).map_err(|e| ReplayError::TrajectoryCorrupt {
            line: i + 1,
            reason: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(verify(&events))
}

fn agent_key(e: &TrajectoryEvent) -> String {
    match (&e.slot, &e.agent) {
        (_, Some(agent)) => agent.clone(),
        (Some(slot), None) => slot.clone(),
        (None, None) => "<run>".into(),
    }
}

fn payload_str<'a>(e: &'a TrajectoryEvent, key: &str) -> &'a str {
    e.payload.get(key).and_then(Value::as_str).unwrap_or_default()
}

/// Checks sequence contiguity, bracketing, action/observation pairing, turn
/// numbering per agent and usage conservation.
pub fn verify(events: &[TrajectoryEvent]) -> ReplayReport {
    let mut violations = Vec::new();
    if events.is_empty() {
        violations.push("empty trajectory".into());
    }

    for (i, e) in events.iter().enumerate() {
        let expected = i as u64 + 1;
        if e.seq != expected {
            violations.push(format!("line {}: expected seq {expected}, found {}", i + 1, e.seq));
            break;
        }
    }

    let starts = events.iter().filter(|e| e.kind == EventKind::RunStart).count();
    let ends = events.iter().filter(|e| e.kind == EventKind::RunEnd).count();
    if events.first().map(|e| e.kind) != Some(EventKind::RunStart) || starts != 1 {
        violations.push(format!("expected exactly one leading run_start, found {starts}"));
    }
    if events.last().map(|e| e.kind) != Some(EventKind::RunEnd) || ends != 1 {
        violations.push(format!("expected exactly one trailing run_end, found {ends}"));
    }
    if let Some(first) = events.first() {
        if let Some(other) = events.iter().find(|e| e.run_id != first.run_id) {
            violations.push(format!(
                "seq {}: run_id {} differs from {}",
                other.seq, other.run_id, first.run_id
            ));
        }
    }

    // action id -> (tool_call count, observation count, first observation before call)
    let mut pairs: BTreeMap<String, (usize, usize, bool)> = BTreeMap::new();
    for e in events {
        match e.kind {
            EventKind::ToolCall => pairs.entry(payload_str(e, "action_id").to_string()).or_default().0 += 1,
            EventKind::Observation => {
                let entry = pairs.entry(payload_str(e, "action_id").to_string()).or_default();
                if entry.0 == 0 {
                    entry.2 = true;
                }
                entry.1 += 1;
            }
            _ => {}
        }
    }
    for (id, (calls, observations, early)) in &pairs {
        match (calls, observations) {
            (1, 1) if !early => {}
            (1, 1) => violations.push(format!("observation precedes action {id}")),
            (0, _) => violations.push(format!("observation without action {id}")),
            (_, 0) => violations.push(format!("unpaired action {id}")),
            _ => violations.push(format!("duplicate action {id}")),
        }
    }

    let mut turns: HashMap<String, u32> = HashMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::Turn) {
        let key = agent_key(e);
        let last = turns.entry(key.clone()).or_insert(0);
        match e.turn {
            Some(t) if t == *last + 1 => *last = t,
            other => {
                violations.push(format!("agent {key}: turn {other:?} follows turn {last}"));
                *last = other.unwrap_or(*last);
            }
        }
    }

    let mut sum = TokenUsage::default();
    for e in events.iter().filter(|e| e.kind != EventKind::RunEnd) {
        if let Some(u) = e.usage {
            sum += u;
        }
    }
    if let Some(end) = events.iter().find(|e| e.kind == EventKind::RunEnd) {
        let recorded = end.usage.unwrap_or_default();
        if recorded != sum {
            violations.push(format!(
                "usage mismatch: events sum to {}+{}, run_end records {}+{}",
                sum.prompt_tokens, sum.completion_tokens, recorded.prompt_tokens, recorded.completion_tokens
            ));
        }
    }

    let mut transcripts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in events {
        let line = match e.kind {
            EventKind::Turn => format!("turn {}: {}", e.turn.unwrap_or(0), payload_str(e, "content")),
            EventKind::ToolCall => format!(
                "call {} {}({})",
                payload_str(e, "action_id"),
                payload_str(e, "tool"),
                e.payload.get("arguments").cloned().unwrap_or(Value::Null)
            ),
            EventKind::Observation => format!(
                "observation {} [{}]: {}",
                payload_str(e, "action_id"),
                payload_str(e, "status"),
                payload_str(e, "content")
            ),
            EventKind::Critique => format!("critique: {}", payload_str(e, "content")),
            EventKind::Compression => format!(
                "compression: replaced {}",
                e.payload.get("replaced_count").cloned().unwrap_or(Value::Null)
            ),
            EventKind::Error => format!("error: {}", payload_str(e, "message")),
            _ => continue,
        };
        transcripts.entry(agent_key(e)).or_default().push(line);
    }

    ReplayReport {
        complete: violations.is_empty(),
        violations,
        event_count: events.len(),
        transcripts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{EventDraft, Recorder};
    use serde_json::json;

    fn sample(dir: &Path) -> String {
        let path = dir.join("t.jsonl");
        let rec = Recorder::open(&path, "r", json!({})).unwrap();
        let u = TokenUsage {
            prompt_tokens: 4,
            completion_tokens: 1,
        };
        rec.record(
            EventDraft::new(EventKind::Turn, json!({"content": ""}))
                .agent("a")
                .turn(1)
                .usage(u),
        )
        .unwrap();
        rec.record(
            EventDraft::new(EventKind::ToolCall, json!({"action_id": "x1", "tool": "exec"}))
                .agent("a")
                .turn(1),
        )
        .unwrap();
        rec.record(
            EventDraft::new(EventKind::Observation, json!({"action_id": "x1", "content": "hi"}))
                .agent("a")
                .turn(1),
        )
        .unwrap();
        rec.record(
            EventDraft::new(EventKind::Turn, json!({"content": "FINAL: hi"}))
                .agent("a")
                .turn(2)
                .usage(u),
        )
        .unwrap();
        rec.close(json!({})).unwrap();
        std::fs::read_to_string(path).unwrap()
    }

    #[test]
    fn complete_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let report = replay_str(&sample(dir.path())).unwrap();
        assert!(report.complete, "{:?}", report.violations);
        assert_eq!(report.transcripts["a"].len(), 4);
    }

    #[test]
    fn deleted_observation_is_unpaired() {
        let dir = tempfile::tempdir().unwrap();
        let text = sample(dir.path());
        let kept: Vec<&str> = text.lines().filter(|l| !l.contains("\"observation\"")).collect();
        let report = replay_str(&(kept.join("\n") + "\n")).unwrap();
        assert!(!report.complete);
        assert!(
            report.violations.iter().any(|v| v == "unpaired action x1"),
            "{:?}",
            report.violations
        );
    }

    #[test]
    fn truncated_line_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let text = sample(dir.path());
        let cut = &text[..text.len() - 10];
        match replay_str(cut) {
            Err(ReplayError::TrajectoryCorrupt { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }
}

//! Append-only JSON Lines trajectory.
//!
//! Every line is one [`TrajectoryEvent`] with keys in the fixed order
//! `seq, ts, run_id, slot, agent, kind, turn, payload, usage`. The recorder
//! writes `run_start` when opened and `run_end` when closed, so a trajectory
//! is always bracketed. Appends are serialized under one lock and written with
//! a single `write` each, so concurrent producers never tear lines.

pub mod replay;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::TokenUsage;

pub use replay::{replay, ReplayError, ReplayReport};

/// Fields that legitimately differ between two runs of the same config.
pub const VOLATILE_FIELDS: [&str; 4] = ["ts", "run_id", "duration_ms", "wall_seconds"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStart,
    Turn,
    ToolCall,
    Observation,
    Critique,
    Compression,
    Promotion,
    RunEnd,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub run_id: String,
    pub slot: Option<String>,
    pub agent: Option<String>,
    pub kind: EventKind,
    pub turn: Option<u32>,
    pub payload: Value,
    pub usage: Option<TokenUsage>,
}

/// An event before the recorder stamps it with `seq`, `ts` and `run_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraft {
    pub slot: Option<String>,
    pub agent: Option<String>,
    pub kind: EventKind,
    pub turn: Option<u32>,
    pub payload: Value,
    pub usage: Option<TokenUsage>,
}

impl EventDraft {
    pub fn new(kind: EventKind, payload: Value) -> Self {
        Self {
            slot: None,
            agent: None,
            kind,
            turn: None,
            payload,
            usage: None,
        }
    }

    pub fn slot(mut self, slot: Option<String>) -> Self {
        self.slot = slot;
        self
    }

    pub fn agent(mut self, agent: impl Into<String>) -> Self {
        self.agent = Some(agent.into());
        self
    }

    pub fn turn(mut self, turn: u32) -> Self {
        self.turn = Some(turn);
        self
    }

    pub fn usage(mut self, usage: TokenUsage) -> Self {
        self.usage = Some(usage);
        self
    }
}

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("recorder is closed")]
    Closed,
    #[error("{0:?} events are written by the recorder itself")]
    ReservedKind(EventKind),
    #[error("trajectory I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Destination for agent and playground events.
pub trait EventSink: Send + Sync {
    fn emit(&self, draft: EventDraft) -> Result<(), RecorderError>;

    /// Emits a batch; the recorder keeps a batch contiguous.
    fn emit_all(&self, drafts: Vec<EventDraft>) -> Result<(), RecorderError> {
        drafts.into_iter().try_for_each(|d| self.emit(d))
    }
}

struct Inner {
    file: File,
    seq: u64,
    closed: bool,
    usage: TokenUsage,
}

pub struct Recorder {
    run_id: String,
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl Recorder {
    /// Creates the trajectory file and writes `run_start` (seq 1).
    pub fn open(path: &Path, run_id: impl Into<String>, start_payload: Value) -> Result<Self, RecorderError> {
        let file = OpenOptions::new().create_new(true).append(true).open(path)?;
        let recorder = Self {
            run_id: run_id.into(),
            path: path.to_path_buf(),
            inner: Mutex::new(Inner {
                file,
                seq: 0,
                closed: false,
                usage: TokenUsage::default(),
            }),
        };
        {
            let mut inner = recorder.inner.lock().expect("recorder lock");
            recorder.write(&mut inner, EventDraft::new(EventKind::RunStart, start_payload))?;
        }
        Ok(recorder)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write(&self, inner: &mut Inner, draft: EventDraft) -> Result<u64, RecorderError> {
        let event = TrajectoryEvent {
            seq: inner.seq + 1,
            ts: Utc::now(),
            run_id: self.run_id.clone(),
            slot: draft.slot,
            agent: draft.agent,
            kind: draft.kind,
            turn: draft.turn,
            payload: draft.payload,
            usage: draft.usage,
        };
        let mut line = serde_json::to_string(&event).map_err(std::io::Error::from)?;
        line.push('\n');
        inner.file.write_all(line.as_bytes())?;
        inner.seq += 1;
        if let Some(u) = draft.usage {
            inner.usage += u;
        }
        Ok(inner.seq)
    }

    fn check(draft: &EventDraft) -> Result<(), RecorderError> {
        match draft.kind {
            EventKind::RunStart | EventKind::RunEnd => Err(RecorderError::ReservedKind(draft.kind)),
            _ => Ok(()),
        }
    }

    /// Appends one event and returns its sequence number.
    pub fn record(&self, draft: EventDraft) -> Result<u64, RecorderError> {
        Self::check(&draft)?;
        let mut inner = self.inner.lock().expect("recorder lock");
        if inner.closed {
            return Err(RecorderError::Closed);
        }
        self.write(&mut inner, draft)
    }

    /// Appends a batch under one lock so its sequence numbers are contiguous.
    pub fn record_batch(&self, drafts: Vec<EventDraft>) -> Result<(), RecorderError> {
        drafts.iter().try_for_each(Self::check)?;
        let mut inner = self.inner.lock().expect("recorder lock");
        if inner.closed {
            return Err(RecorderError::Closed);
        }
        for d in drafts {
            self.write(&mut inner, d)?;
        }
        Ok(())
    }

    /// Sum of every usage recorded so far.
    pub fn usage(&self) -> TokenUsage {
        self.inner.lock().expect("recorder lock").usage
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().expect("recorder lock").seq
    }

    /// Writes `run_end` carrying the usage totals and closes the recorder.
    pub fn close(&self, payload: Value) -> Result<u64, RecorderError> {
        let mut inner = self.inner.lock().expect("recorder lock");
        if inner.closed {
            return Err(RecorderError::Closed);
        }
        let total = inner.usage;
        let mut draft = EventDraft::new(EventKind::RunEnd, payload);
        draft.usage = Some(total);
        let seq = self.write(&mut inner, draft)?;
        // run_end is not part of the per-event sum.
        inner.usage = total;
        inner.file.sync_all()?;
        inner.closed = true;
        Ok(seq)
    }
}

impl EventSink for Recorder {
    fn emit(&self, draft: EventDraft) -> Result<(), RecorderError> {
        self.record(draft).map(|_| ())
    }

    fn emit_all(&self, drafts: Vec<EventDraft>) -> Result<(), RecorderError> {
        self.record_batch(drafts)
    }
}

/// Collects a branch's events so they can be committed in a fixed order once
/// the branch ends.
#[derive(Default)]
pub struct BufferedSink {
    events: Mutex<Vec<EventDraft>>,
}

impl BufferedSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_events(self) -> Vec<EventDraft> {
        self.events.into_inner().expect("buffer lock")
    }
}

impl EventSink for BufferedSink {
    fn emit(&self, draft: EventDraft) -> Result<(), RecorderError> {
        self.events.lock().expect("buffer lock").push(draft);
        Ok(())
    }
}

/// Removes volatile fields (at any depth) so two runs can be compared.
pub fn mask_volatile(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for key in VOLATILE_FIELDS {
                if map.contains_key(key) {
                    map.insert(key.to_string(), Value::String("<masked>".into()));
                }
            }
            map.values_mut().for_each(mask_volatile);
        }
        Value::Array(items) => items.iter_mut().for_each(mask_volatile),
        _ => {}
    }
}

/// Reads a trajectory and returns each line as masked JSON.
pub fn masked_lines(path: &Path) -> std::io::Result<Vec<Value>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).map_err(std::io::Error::from)?;
            mask_volatile(&mut v);
            Ok(v)
        })
        .collect()
}

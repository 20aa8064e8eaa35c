mod common;

use common::{Rig, DOWN, NEVER};
use evo_core::agent::{self, AgentIdentity, AgentInput, AgentSpec, AgentStatus, EngineError};
use evo_core::context::{CompressionStrategy, ContextBudget, EntryKind};
use evo_core::trajectory::EventKind;
use proptest::prelude::*;

const TOOLUSE: &str = r#"[
  {"content": "Let me check.", "tool_calls": [{"name": "exec", "arguments": {"cmd": "echo hi"}}]},
  {"match": "^SELF-CRITIQUE", "content": "The command printed hi."},
  {"content": "FINAL: hi"}
]"#;

fn spec(profile: &str, tools: &[&str]) -> AgentSpec {
    let mut s = AgentSpec::new("solo", profile);
    s.tool_names = tools.iter().map(|t| t.to_string()).collect();
    s
}

#[test]
fn answers_on_first_turn() {
    let rig = Rig::new(&[("echo", r#"[{"content": "FINAL: 4"}]"#)]);
    let out = agent::run(
        AgentIdentity::new("solo"),
        spec("echo", &[]),
        AgentInput::task("What is 2 + 2?"),
        &rig.agent_services(),
    )
    .unwrap();
    assert_eq!(out.status, AgentStatus::Answered);
    assert_eq!(out.final_answer.as_deref(), Some("4"));
    assert_eq!(out.turns, 1);
    assert!(rig.finish().complete);
}

#[test]
fn tool_call_then_critique_then_answer() {
    let rig = Rig::new(&[("tooluse", TOOLUSE)]);
    let services = rig.agent_services();
    let mut state = agent::start(
        AgentIdentity::new("solo"),
        spec("tooluse", &["exec"]),
        AgentInput::task("Run echo hi."),
        &services,
    )
    .unwrap();
    while !state.is_terminated() {
        agent::step(&mut state, &services).unwrap();
    }
    let out = state.outcome().unwrap();
    assert_eq!(out.status, AgentStatus::Answered);
    assert_eq!(out.final_answer.as_deref(), Some("hi"));
    assert_eq!(out.turns, 2);

    let records = state.records();
    assert_eq!(records[0].actions[0].id, "solo/t1/c0");
    assert_eq!(records[0].observations.len(), 1);
    assert_eq!(records[0].observations[0].content, "hi\n");
    assert_eq!(records[0].critique.as_deref(), Some("The command printed hi."));
    // No critique after the answering turn.
    assert_eq!(records[1].critique, None);

    // The critique pair sits between the tool result and the next reply.
    let kinds: Vec<EntryKind> = state.context().entries().iter().map(|e| e.kind).collect();
    let first_critique = kinds.iter().position(|k| *k == EntryKind::Critique).unwrap();
    assert_eq!(kinds[first_critique + 1], EntryKind::Critique);
    assert_eq!(kinds.iter().filter(|k| **k == EntryKind::Critique).count(), 2);

    let events = rig.events();
    let order: Vec<EventKind> = events.iter().map(|e| e.kind).collect();
    assert_eq!(
        order,
        [
            EventKind::RunStart,
            EventKind::Turn,
            EventKind::ToolCall,
            EventKind::Observation,
            EventKind::Critique,
            EventKind::Turn
        ]
    );
    assert!(rig.finish().complete);
}

#[test]
fn never_answering_agent_stops_at_max_turns() {
    let rig = Rig::new(&[("never", NEVER)]);
    let mut s = spec("never", &[]);
    s.max_turns = 5;
    let out = agent::run(
        AgentIdentity::new("solo"),
        s,
        AgentInput::task("Loop."),
        &rig.agent_services(),
    )
    .unwrap();
    assert_eq!(out.status, AgentStatus::MaxTurns);
    assert_eq!(out.turns, 5);
    assert_eq!(out.final_answer, None);
    assert_eq!(out.last_response.as_deref(), Some("Still working on it."));
}

#[test]
fn stepping_a_terminated_agent_is_rejected() {
    let rig = Rig::new(&[("echo", r#"[{"content": "FINAL: 4"}]"#)]);
    let services = rig.agent_services();
    let mut state = agent::start(
        AgentIdentity::new("solo"),
        spec("echo", &[]),
        AgentInput::task("t"),
        &services,
    )
    .unwrap();
    agent::step(&mut state, &services).unwrap();
    assert!(state.is_terminated());
    assert!(matches!(
        agent::step(&mut state, &services),
        Err(EngineError::SteppedAfterTermination)
    ));
}

#[test]
fn provider_failure_ends_with_error_status() {
    let rig = Rig::new(&[]);
    let out = agent::run(
        AgentIdentity::new("solo"),
        spec(DOWN, &[]),
        AgentInput::task("t"),
        &rig.agent_services(),
    )
    .unwrap();
    assert_eq!(out.status, AgentStatus::Error);
    assert!(out.error.unwrap().contains("provider error"));
    assert!(rig.events().iter().any(|e| e.kind == EventKind::Error));
    assert!(rig.finish().complete);
}

#[test]
fn unknown_profile_and_tool_are_config_errors() {
    let rig = Rig::new(&[("echo", NEVER)]);
    let services = rig.agent_services();
    let err = agent::start(
        AgentIdentity::new("solo"),
        spec("ghost", &[]),
        AgentInput::task("t"),
        &services,
    )
    .err()
    .unwrap();
    assert!(matches!(err, EngineError::Config(m) if m.contains("ghost")));
    let err = agent::start(
        AgentIdentity::new("solo"),
        spec("echo", &["teleport"]),
        AgentInput::task("t"),
        &services,
    )
    .err()
    .unwrap();
    assert!(matches!(err, EngineError::Config(m) if m.contains("teleport")));
}

#[test]
fn tool_outside_the_slot_list_is_an_error_observation() {
    let script = r#"[
      {"content": "", "tool_calls": [{"name": "file_read", "arguments": {"path": "x"}}]},
      {"content": "FINAL: done"}
    ]"#;
    let rig = Rig::new(&[("s", script)]);
    let mut s = spec("s", &["exec"]);
    s.critique_every = 100;
    let out = agent::run(
        AgentIdentity::new("solo"),
        s,
        AgentInput::task("t"),
        &rig.agent_services(),
    )
    .unwrap();
    assert_eq!(out.status, AgentStatus::Answered);
    let obs = rig
        .events()
        .into_iter()
        .find(|e| e.kind == EventKind::Observation)
        .unwrap();
    assert_eq!(obs.payload["is_error"], true);
}

#[test]
fn step_and_run_produce_the_same_outcome() {
    let a = Rig::new(&[("tooluse", TOOLUSE)]);
    let b = Rig::new(&[("tooluse", TOOLUSE)]);
    let ran = agent::run(
        AgentIdentity::new("solo"),
        spec("tooluse", &["exec"]),
        AgentInput::task("t"),
        &a.agent_services(),
    )
    .unwrap();
    let services = b.agent_services();
    let mut state = agent::start(
        AgentIdentity::new("solo"),
        spec("tooluse", &["exec"]),
        AgentInput::task("t"),
        &services,
    )
    .unwrap();
    while !state.is_terminated() {
        agent::step(&mut state, &services).unwrap();
    }
    assert_eq!(&ran, state.outcome().unwrap());
}

#[test]
fn small_budget_compresses_and_keeps_pinned_entries() {
    let long = "x".repeat(400);
    let script = serde_json::json!([{ "content": long }]).to_string();
    for strategy in [CompressionStrategy::Summarize, CompressionStrategy::SlidingWindow] {
        let rig = Rig::new(&[("long", &script)]);
        let services = rig.agent_services();
        let mut s = spec("long", &[]);
        s.max_turns = 8;
        s.critique_every = 100;
        s.budget = ContextBudget::new(600, 0.5, strategy);
        let mut state = agent::start(
            AgentIdentity::new("solo"),
            s.clone(),
            AgentInput::task("Write a lot."),
            &services,
        )
        .unwrap();
        while !state.is_terminated() {
            agent::step(&mut state, &services).unwrap();
            let rendered = state.context().render(&s.budget).unwrap();
            let tokens: u64 = rendered.iter().map(|m| m.estimated_tokens()).sum();
            assert!(tokens <= s.budget.max_tokens);
            assert!(state.context().entries().iter().any(|e| e.kind == EntryKind::Task));
        }
        assert_eq!(state.outcome().unwrap().status, AgentStatus::MaxTurns);
        let compressions: Vec<_> = rig
            .events()
            .into_iter()
            .filter(|e| e.kind == EventKind::Compression)
            .collect();
        assert!(!compressions.is_empty());
        for c in &compressions {
            assert!(c.payload["after_tokens"].as_u64() < c.payload["before_tokens"].as_u64());
            assert_eq!(c.payload["model_called"], strategy == CompressionStrategy::Summarize);
        }
        assert!(rig.finish().complete);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Whatever the script says, the loop ends within max_turns.
    #[test]
    fn bounded_execution(contents in prop::collection::vec(
        prop_oneof!["[a-z ]{0,20}", "FINAL: [a-z]{1,5}", Just(String::new())], 1..6),
        max_turns in 1u32..6,
    ) {
        let entries: Vec<_> = contents.iter().map(|c| serde_json::json!({"content": c})).collect();
        let script = serde_json::Value::Array(entries).to_string();
        let rig = Rig::new(&[("p", &script)]);
        let mut s = spec("p", &[]);
        s.max_turns = max_turns;
        let out = agent::run(AgentIdentity::new("solo"), s, AgentInput::task("t"), &rig.agent_services()).unwrap();
        prop_assert!(out.turns <= max_turns);
        prop_assert!(matches!(out.status, AgentStatus::Answered | AgentStatus::MaxTurns));
        prop_assert!(rig.finish().complete);
    }
}

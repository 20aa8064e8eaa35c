mod common;

use common::{answers, fixtures, slot, slot_with, Rig, DOWN, NEVER};
use evo_core::agent::AgentStatus;
use evo_core::playground::patterns::{self, select_best};
use evo_core::playground::{PlaygroundDefinition, PlaygroundError, PlaygroundRegistry, PlaygroundStatus};
use evo_core::trajectory::EventKind;
use serde_json::json;

fn script(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("scripts").join(name)).unwrap()
}

#[test]
fn builtin_registry_and_duplicates() {
    let mut registry = PlaygroundRegistry::with_builtins();
    assert_eq!(
        registry.names(),
        [
            "draft_and_improve",
            "parallel_explore",
            "planner_executor",
            "sequential_handoff",
            "single_agent_research",
            "solve_critique_rewrite_select"
        ]
    );
    let dup = patterns::definitions().remove(0);
    assert!(matches!(
        registry.register(dup),
        Err(PlaygroundError::DuplicatePlayground(_))
    ));

    fn custom(reg: &mut PlaygroundRegistry) -> Result<(), PlaygroundError> {
        reg.register(PlaygroundDefinition::new("echo_back", "test", |ctx| {
            let task = ctx.task.clone();
            Ok(ctx.result(task, PlaygroundStatus::Ok, 1))
        }))
    }
    let registry = PlaygroundRegistry::startup(&[custom]).unwrap();
    assert_eq!(registry.names().len(), 7);
    assert!(PlaygroundRegistry::startup(&[custom, custom]).is_err());

    let rig = Rig::new(&[]);
    assert!(matches!(
        rig.run("nope", "t", json!({}), vec![]),
        Err(PlaygroundError::PlaygroundNotFound(n)) if n == "nope"
    ));
}

#[test]
fn sequential_handoff_chains_answers() {
    let rig = Rig::new(&[
        ("a", &script("handoff-a.script")),
        ("b", &script("handoff-b.script")),
        ("c", &script("handoff-c.script")),
    ]);
    let slots = vec![slot("a", "a", "a"), slot("b", "b", "b"), slot("c", "c", "c")];
    let result = rig.run("sequential_handoff", "Spell it.", json!({}), slots).unwrap();
    assert_eq!(result.final_answer, "A|B|C");
    assert_eq!(result.status, PlaygroundStatus::Ok);
    assert_eq!(result.per_slot_outcomes.len(), 3);
    assert!(rig.finish().complete);
}

#[test]
fn sequential_handoff_stops_at_a_failed_slot() {
    let rig = Rig::new(&[("a", &script("handoff-a.script")), ("c", &script("handoff-c.script"))]);
    let slots = vec![slot("a", "a", "a"), slot("b", "b", DOWN), slot("c", "c", "c")];
    let result = rig.run("sequential_handoff", "Spell it.", json!({}), slots).unwrap();
    assert_eq!(result.status, PlaygroundStatus::Failed);
    assert_eq!(result.final_answer, "A");
    assert_eq!(result.per_slot_outcomes["b"].status, AgentStatus::Error);
    assert!(!result.per_slot_outcomes.contains_key("c"));
    assert!(rig.finish().complete);
}

const AGGREGATOR: &str = r#"[
  {"match": "\\[e\\d\\] failed", "content": "FINAL: degraded"},
  {"match": "\\[e1\\] (\\S+)\\n\\[e2\\] (\\S+)\\n\\[e3\\] (\\S+)\\n\\[e4\\] (\\S+)", "content": "FINAL: {{1}},{{2}},{{3}},{{4}}"}
]"#;

#[test]
fn parallel_explore_aggregates_in_slot_order() {
    let scripts: Vec<(String, String)> = (1..=4).map(|k| (format!("e{k}"), answers(&format!("e{k}")))).collect();
    let mut refs: Vec<(&str, &str)> = scripts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    refs.push(("agg", AGGREGATOR));
    let rig = Rig::new(&refs);
    // Declared out of order on purpose.
    let mut slots: Vec<_> = [4, 2, 1, 3]
        .iter()
        .map(|k| slot(&format!("e{k}"), "explorer", &format!("e{k}")))
        .collect();
    slots.push(slot("agg", "aggregator", "agg"));
    let result = rig.run("parallel_explore", "Explore.", json!({}), slots).unwrap();
    assert_eq!(result.final_answer, "e1,e2,e3,e4");
    assert_eq!(result.status, PlaygroundStatus::Ok);
    assert!(rig.finish().complete);
}

#[test]
fn parallel_explore_reports_a_failed_explorer() {
    let rig = Rig::new(&[("e", &answers("ok")), ("agg", AGGREGATOR)]);
    let slots = vec![
        slot("e1", "explorer", "e"),
        slot("e2", "explorer", "e"),
        slot("e3", "explorer", DOWN),
        slot("agg", "aggregator", "agg"),
    ];
    let result = rig.run("parallel_explore", "Explore.", json!({}), slots).unwrap();
    assert_eq!(result.status, PlaygroundStatus::Partial);
    assert_eq!(result.final_answer, "degraded");
    assert!(rig.finish().complete);
}

#[test]
fn parallel_slots_sharing_a_profile_do_not_share_state() {
    let rig = Rig::new(&[
        (
            "shared",
            r#"[{"content": "FINAL: first"}, {"content": "FINAL: second"}]"#,
        ),
        (
            "agg",
            r#"[{"match": "(?s)\\[e1\\] (\\S+)\\n\\[e2\\] (\\S+)", "content": "FINAL: {{1}}/{{2}}"}]"#,
        ),
    ]);
    let slots = vec![
        slot("e1", "explorer", "shared"),
        slot("e2", "explorer", "shared"),
        slot("agg", "aggregator", "agg"),
    ];
    let result = rig.run("parallel_explore", "Explore.", json!({}), slots).unwrap();
    assert_eq!(result.final_answer, "first/first");
}

fn scrs_slots(critic: &str) -> (Vec<(&'static str, String)>, Vec<evo_core::playground::AgentSlot>) {
    let scripts = vec![
        ("s1", answers("11")),
        ("s2", answers("12")),
        ("critic", critic.to_string()),
        ("rewriter", answers("13")),
        ("selector", answers("2")),
    ];
    let slots = vec![
        slot("s1", "solver", "s1"),
        slot("s2", "solver", "s2"),
        slot("critic", "critic", "critic"),
        slot("rewriter", "rewriter", "rewriter"),
        slot("selector", "selector", "selector"),
    ];
    (scripts, slots)
}

#[test]
fn scrs_rewrites_criticised_candidates_and_returns_the_selection_verbatim() {
    let critic = r#"[
      {"match": "Candidate 1:", "content": "FINAL: Arithmetic is off."},
      {"match": "Candidate 2:", "content": "FINAL: NO ISSUES"}
    ]"#;
    let (scripts, slots) = scrs_slots(critic);
    let refs: Vec<(&str, &str)> = scripts.iter().map(|(a, b)| (*a, b.as_str())).collect();
    let rig = Rig::new(&refs);
    let result = rig
        .run("solve_critique_rewrite_select", "3 x 4?", json!({}), slots)
        .unwrap();
    assert_eq!(result.final_answer, "12");
    assert_eq!(result.status, PlaygroundStatus::Ok);
    assert!(result.per_slot_outcomes.contains_key("rewriter#1"));
    assert!(!result.per_slot_outcomes.contains_key("rewriter#2"));
    assert!(rig.finish().complete);
}

#[test]
fn scrs_skips_rewriting_when_no_issues_are_found() {
    let (scripts, slots) = scrs_slots(&answers("NO ISSUES"));
    let refs: Vec<(&str, &str)> = scripts.iter().map(|(a, b)| (*a, b.as_str())).collect();
    let rig = Rig::new(&refs);
    let result = rig
        .run("solve_critique_rewrite_select", "3 x 4?", json!({}), slots)
        .unwrap();
    assert_eq!(result.final_answer, "12");
    assert!(result.per_slot_outcomes.keys().all(|k| !k.starts_with("rewriter")));
}

#[test]
fn scrs_rejects_zero_rounds() {
    let (scripts, slots) = scrs_slots(&answers("NO ISSUES"));
    let refs: Vec<(&str, &str)> = scripts.iter().map(|(a, b)| (*a, b.as_str())).collect();
    let rig = Rig::new(&refs);
    let err = rig
        .run("solve_critique_rewrite_select", "t", json!({"n_rounds": 0}), slots)
        .unwrap_err();
    assert!(matches!(err, PlaygroundError::InvalidParams(_)));
}

fn planner_rig(planner_script: &str) -> (Rig, Vec<evo_core::playground::AgentSlot>) {
    let rig = Rig::new(&[("planner", planner_script), ("executor", &answers("found something"))]);
    let slots = vec![
        slot_with("planner", "planner", "planner", |s| s.max_turns = 1),
        slot("executor", "executor", "executor"),
    ];
    (rig, slots)
}

#[test]
fn planner_finalizes_in_round_three() {
    let (rig, slots) =
        planner_rig(r#"[{"content": "Plan: search."}, {"content": "Plan: fetch."}, {"content": "FINAL: boiled"}]"#);
    let result = rig.run("planner_executor", "Boil?", json!({}), slots).unwrap();
    assert_eq!(result.rounds_used, 3);
    assert_eq!(result.final_answer, "boiled");
    assert_eq!(result.status, PlaygroundStatus::Ok);
    assert_eq!(result.per_slot_outcomes.len(), 5);
    assert!(result.per_slot_outcomes.contains_key("planner@3"));
    assert!(rig.finish().complete);
}

#[test]
fn planner_caps_rounds() {
    let (rig, slots) = planner_rig(NEVER);
    let result = rig.run("planner_executor", "Boil?", json!({}), slots.clone()).unwrap();
    assert_eq!(result.rounds_used, 10);
    assert_eq!(result.status, PlaygroundStatus::Partial);
    assert!(result.final_answer.starts_with("[round 1] found something"));

    let (rig, slots) = planner_rig(NEVER);
    let result = rig
        .run("planner_executor", "Boil?", json!({"max_rounds": 3}), slots)
        .unwrap();
    assert_eq!(result.rounds_used, 3);
}

fn draft_rig(a: &str, b: &str) -> Rig {
    let evaluator = json!([
        {"match": "Proposal from imp-a:", "content": format!("SCORE: {a}")},
        {"match": "Proposal from imp-b:", "content": format!("SCORE: {b}")}
    ])
    .to_string();
    Rig::new(&[
        ("drafter", &answers("v0")),
        ("imp-a", &answers("va")),
        ("imp-b", &answers("vb")),
        ("evaluator", &evaluator),
    ])
}

fn draft_slots() -> Vec<evo_core::playground::AgentSlot> {
    vec![
        slot("drafter", "drafter", "drafter"),
        slot("imp-a", "improver", "imp-a"),
        slot("imp-b", "improver", "imp-b"),
        slot_with("evaluator", "evaluator", "evaluator", |s| s.max_turns = 1),
    ]
}

#[test]
fn draft_and_improve_adopts_the_best_score() {
    let rig = draft_rig("3.0", "7.0");
    let result = rig
        .run("draft_and_improve", "Dedupe.", json!({"max_rounds": 1}), draft_slots())
        .unwrap();
    assert_eq!(result.final_answer, "vb");
    assert_eq!(result.rounds_used, 1);
    let rounds = rig.cache.round_records().unwrap();
    assert_eq!(rounds.len(), 1);
    assert!(rounds[0].1.starts_with("adopted imp-b with score 7"));
    assert!(rig.finish().complete);
}

#[test]
fn draft_and_improve_breaks_ties_by_name() {
    let rig = draft_rig("5.0", "5.0");
    let result = rig
        .run("draft_and_improve", "Dedupe.", json!({"max_rounds": 1}), draft_slots())
        .unwrap();
    assert_eq!(result.final_answer, "va");
    assert_eq!(select_best(&[("b".into(), 1.0), ("a".into(), 1.0)]), Some(1));
}

#[test]
fn draft_and_improve_stops_at_target_score() {
    let rig = draft_rig("3.0", "7.0");
    let result = rig
        .run(
            "draft_and_improve",
            "Dedupe.",
            json!({"max_rounds": 5, "target_score": 6.5}),
            draft_slots(),
        )
        .unwrap();
    assert_eq!(result.rounds_used, 1);
}

#[test]
fn research_rejects_an_empty_tool_pack() {
    let rig = Rig::new(&[("r", &answers("x"))]);
    let slots = vec![slot("r", "researcher", "r")];
    let err = rig
        .run("single_agent_research", "t", json!({"tool_pack": []}), slots.clone())
        .unwrap_err();
    assert!(matches!(err, PlaygroundError::ConfigError(_)));
    let err = rig
        .run("single_agent_research", "t", json!({"tool_pack": ["teleport"]}), slots)
        .unwrap_err();
    assert!(matches!(err, PlaygroundError::ConfigError(m) if m.contains("teleport")));
}

#[test]
fn research_continues_after_a_missing_page() {
    let script = r#"[
      {"content": "Fetching.", "tool_calls": [{"name": "web_fetch", "arguments": {"url": "https://example.org/missing"}}]},
      {"match": "^SELF-CRITIQUE", "content": "That page does not exist."},
      {"content": "FINAL: 100 degrees Celsius (https://example.org/water)"}
    ]"#;
    let rig = Rig::new(&[("r", script)]);
    let result = rig
        .run(
            "single_agent_research",
            "Boil?",
            json!({}),
            vec![slot("r", "researcher", "r")],
        )
        .unwrap();
    assert_eq!(result.status, PlaygroundStatus::Ok);
    assert_eq!(result.final_answer, "100 degrees Celsius (https://example.org/water)");
    let obs = rig
        .events()
        .into_iter()
        .find(|e| e.kind == EventKind::Observation)
        .unwrap();
    assert_eq!(obs.payload["is_error"], true);
    assert!(rig.finish().complete);
}

#[test]
fn unknown_profile_is_a_slot_error() {
    let rig = Rig::new(&[]);
    let err = rig
        .run("sequential_handoff", "t", json!({}), vec![slot("a", "a", "ghost")])
        .unwrap_err();
    assert!(matches!(err, PlaygroundError::SlotConfigError(m) if m.contains("ghost")));
}

#[test]
fn role_cardinality_is_checked() {
    let rig = Rig::new(&[("e", &answers("x"))]);
    let slots = vec![slot("e1", "explorer", "e"), slot("agg", "aggregator", "e")];
    let err = rig.run("parallel_explore", "t", json!({}), slots).unwrap_err();
    assert!(matches!(err, PlaygroundError::SlotConfigError(_)));
}

#[test]
fn editing_one_slot_never_changes_another_slots_context() {
    use evo_core::agent::{self, AgentIdentity, AgentInput};
    let rig = Rig::new(&[("p", &answers("x")), ("q", &answers("y"))]);
    let services = rig.agent_services();
    let render = |s: &evo_core::playground::AgentSlot| {
        let state = agent::start(
            AgentIdentity::new(&s.slot_name),
            s.spec.clone(),
            AgentInput::task("Same task."),
            &services,
        )
        .unwrap();
        state.context().render(&s.spec.budget).unwrap()
    };
    let mut a = slot_with("a", "explorer", "p", |s| s.system_prompt = "Be brief.".into());
    let b = slot_with("b", "explorer", "p", |s| s.system_prompt = "Be thorough.".into());
    let before = render(&b);
    a.spec.system_prompt = "Ignore everything.".into();
    a.spec.llm_profile = "q".into();
    assert_ne!(render(&a), before);
    assert_eq!(render(&b), before);
}

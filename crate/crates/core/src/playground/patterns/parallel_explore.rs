//! Explorers attack the same task concurrently; an aggregator sees every
//! candidate in slot-name order and writes the final answer.

use crate::agent::{AgentInput, AgentStatus};
use crate::playground::{failure_note, usable_text, Job, PlaygroundContext, PlaygroundDefinition, PlaygroundError};
use crate::playground::{PlaygroundResult, PlaygroundStatus};

pub fn definition() -> PlaygroundDefinition {
    PlaygroundDefinition::new("parallel_explore", "Concurrent explorers, one aggregator.", run)
        .role("explorer", 2, usize::MAX)
        .role("aggregator", 1, 1)
}

/// `[slot] answer` per candidate, or `[slot] failed: ...`.
pub fn aggregator_input(task: &str, candidates: &[(String, Result<String, String>)]) -> String {
    let mut out = format!("Task:\n{task}\n\nCandidate answers in slot order:");
    for (slot, c) in candidates {
        match c {
            Ok(answer) => out.push_str(&format!("\n[{slot}] {answer}")),
            Err(note) => out.push_str(&format!("\n[{slot}] {note}")),
        }
    }
    out
}

fn run(ctx: &mut PlaygroundContext) -> Result<PlaygroundResult, PlaygroundError> {
    let explorers = ctx.slots_with_role("explorer");
    let aggregator = ctx.slot_with_role("aggregator")?;
    let jobs = explorers
        .iter()
        .map(|s| Job::new(s, AgentInput::task(ctx.task.clone())))
        .collect();
    let outcomes = ctx.run_parallel(jobs)?;

    let mut status = PlaygroundStatus::Ok;
    let candidates: Vec<(String, Result<String, String>)> = explorers
        .iter()
        .zip(&outcomes)
        .map(|(slot, o)| {
            let c = match (o.status, usable_text(o)) {
                (AgentStatus::Answered, Some(a)) => Ok(a),
                _ => Err(failure_note(o)),
            };
            if c.is_err() {
                status = PlaygroundStatus::Partial;
            }
            (slot.slot_name.clone(), c)
        })
        .collect();

    let input = aggregator_input(&ctx.task, &candidates);
    let outcome = ctx.run_agent(Job::new(&aggregator, AgentInput::task(input)))?;
    match outcome.final_answer {
        Some(answer) if outcome.status == AgentStatus::Answered => Ok(ctx.result(answer, status, 1)),
        _ => {
            let fallback = outcome.last_response.unwrap_or_default();
            Ok(ctx.result(fallback, PlaygroundStatus::Failed, 1))
        }
    }
}

//! Slots run one after another in configured order; each receives the task
//! plus the previous slot's answer.

use crate::agent::{AgentInput, AgentStatus};
use crate::playground::{failure_note, usable_text, Job, PlaygroundContext, PlaygroundDefinition, PlaygroundError};
use crate::playground::{PlaygroundResult, PlaygroundStatus};

pub fn definition() -> PlaygroundDefinition {
    PlaygroundDefinition::new(
        "sequential_handoff",
        "Each slot refines the previous slot's answer.",
        run,
    )
}

pub fn handoff_input(task: &str, previous: Option<(&str, &str)>) -> String {
    match previous {
        None => task.to_string(),
        Some((slot, answer)) => format!("{task}\n\nPrevious answer from {slot}:\n{answer}"),
    }
}

fn run(ctx: &mut PlaygroundContext) -> Result<PlaygroundResult, PlaygroundError> {
    if ctx.slots.is_empty() {
        return Err(PlaygroundError::SlotConfigError(
            "sequential_handoff needs at least one slot".into(),
        ));
    }
    let slots = ctx.slots.clone();
    let mut previous: Option<(String, String)> = None;
    let mut status = PlaygroundStatus::Ok;
    for slot in &slots {
        let input = handoff_input(&ctx.task, previous.as_ref().map(|(s, a)| (s.as_str(), a.as_str())));
        let outcome = ctx.run_agent(Job::new(slot, AgentInput::task(input)))?;
        match usable_text(&outcome) {
            Some(text) => {
                if outcome.status != AgentStatus::Answered {
                    status = PlaygroundStatus::Partial;
                }
                previous = Some((slot.slot_name.clone(), text));
            }
            None => {
                log::warn!("slot `{}` {}", slot.slot_name, failure_note(&outcome));
                let answer = previous.map(|(_, a)| a).unwrap_or_default();
                return Ok(ctx.result(answer, PlaygroundStatus::Failed, 1));
            }
        }
    }
    let answer = previous.map(|(_, a)| a).unwrap_or_default();
    Ok(ctx.result(answer, status, 1))
}

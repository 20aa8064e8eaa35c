//! Iterative deep research. Each round the planner either finalizes (final
//! marker) or writes a search plan from the findings so far; the executor
//! carries the plan out with the retrieval tools and reports findings.

use crate::agent::{AgentInput, AgentStatus};
use crate::playground::{failure_note, Job, ParamType, PlaygroundContext, PlaygroundDefinition, PlaygroundError};
use crate::playground::{PlaygroundResult, PlaygroundStatus};

pub const DEFAULT_MAX_ROUNDS: u32 = 10;

pub fn definition() -> PlaygroundDefinition {
    PlaygroundDefinition::new("planner_executor", "Planner and executor iterate on search plans.", run)
        .param("max_rounds", ParamType::Integer)
        .role("planner", 1, 1)
        .role("executor", 1, 1)
}

pub fn planner_input(task: &str, findings: &[String]) -> String {
    if findings.is_empty() {
        return format!("Task:\n{task}\n\nNo findings yet. Write a search plan.");
    }
    let mut out = format!("Task:\n{task}\n\nFindings so far:");
    for (i, f) in findings.iter().enumerate() {
        out.push_str(&format!("\n[round {}] {f}", i + 1));
    }
    out
}

fn run(ctx: &mut PlaygroundContext) -> Result<PlaygroundResult, PlaygroundError> {
    let max_rounds = ctx.param_u32("max_rounds", DEFAULT_MAX_ROUNDS, 1)?;
    let planner = ctx.slot_with_role("planner")?;
    let executor = ctx.slot_with_role("executor")?;
    let mut findings: Vec<String> = Vec::new();

    for round in 1..=max_rounds {
        let plan = ctx.run_agent(Job::new(
            &planner,
            AgentInput::task(planner_input(&ctx.task, &findings)),
        ))?;
        if plan.status == AgentStatus::Answered {
            let answer = plan.final_answer.unwrap_or_default();
            return Ok(ctx.result(answer, PlaygroundStatus::Ok, round));
        }
        let Some(plan_text) = plan.last_response.filter(|_| plan.status != AgentStatus::Error) else {
            let summary = findings.join("\n");
            return Ok(ctx.result(summary, PlaygroundStatus::Failed, round));
        };

        let input = format!("Task:\n{}\n\nPlan:\n{plan_text}", ctx.task);
        let found = ctx.run_agent(Job::new(&executor, AgentInput::task(input)))?;
        findings.push(match (found.status, &found.final_answer) {
            (AgentStatus::Answered, Some(f)) => f.clone(),
            _ => failure_note(&found),
        });
    }

    let summary = findings
        .iter()
        .enumerate()
        .map(|(i, f)| format!("[round {}] {f}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(ctx.result(summary, PlaygroundStatus::Partial, max_rounds))
}

//! Solve, critique, rewrite, select. Solvers draft candidates in parallel;
//! each round a critic reviews every candidate and a rewriter revises it
//! unless the critic found no issues; a selector finally picks one candidate,
//! returned verbatim.

use std::sync::OnceLock;

use regex::Regex;

use crate::agent::{AgentInput, AgentStatus};
use crate::playground::{usable_text, Job, ParamType, PlaygroundContext, PlaygroundDefinition, PlaygroundError};
use crate::playground::{PlaygroundResult, PlaygroundStatus};

pub const NO_ISSUES: &str = "NO ISSUES";

pub fn definition() -> PlaygroundDefinition {
    PlaygroundDefinition::new(
        "solve_critique_rewrite_select",
        "Parallel solve, critique, rewrite, select.",
        run,
    )
    .param("n_solvers", ParamType::Integer)
    .param("n_rounds", ParamType::Integer)
    .role("solver", 1, usize::MAX)
    .role("critic", 1, 1)
    .role("rewriter", 1, 1)
    .role("selector", 1, 1)
}

pub fn selector_input(task: &str, candidates: &[Option<String>]) -> String {
    let mut out = format!("Task:\n{task}\n\nReply with the number of the best candidate.");
    for (i, c) in candidates.iter().enumerate() {
        match c {
            Some(text) => out.push_str(&format!("\n\nCandidate {}:\n{text}", i + 1)),
            None => out.push_str(&format!("\n\nCandidate {}: failed", i + 1)),
        }
    }
    out
}

fn parse_choice(answer: &str) -> Option<usize> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\d+").unwrap());
    re.find(answer).and_then(|m| m.as_str().parse().ok())
}

fn run(ctx: &mut PlaygroundContext) -> Result<PlaygroundResult, PlaygroundError> {
    let configured = ctx.slots_with_role("solver").len() as u32;
    let n_solvers = ctx.param_u32("n_solvers", if configured > 1 { configured } else { 2 }, 1)?;
    let n_rounds = ctx.param_u32("n_rounds", 1, 1)?;
    let (critic, rewriter, selector) = (
        ctx.slot_with_role("critic")?,
        ctx.slot_with_role("rewriter")?,
        ctx.slot_with_role("selector")?,
    );
    let solvers = ctx.instances("solver", n_solvers)?;
    let mut status = PlaygroundStatus::Ok;

    let jobs = solvers
        .iter()
        .map(|(slot, inst)| Job::new(slot, AgentInput::task(ctx.task.clone())).instance(inst.clone()))
        .collect();
    let mut candidates: Vec<Option<String>> = ctx
        .run_parallel(jobs)?
        .iter()
        .map(|o| {
            (o.status == AgentStatus::Answered)
                .then(|| o.final_answer.clone())
                .flatten()
        })
        .collect();
    if candidates.iter().any(Option::is_none) {
        status = PlaygroundStatus::Partial;
    }

    for _round in 1..=n_rounds {
        let live: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].is_some()).collect();
        let jobs = live
            .iter()
            .map(|&i| {
                let text = candidates[i].as_deref().unwrap_or_default();
                let input = format!("Task:\n{}\n\nCandidate {}:\n{text}", ctx.task, i + 1);
                Job::new(&critic, AgentInput::task(input)).instance(format!("{}#{}", critic.slot_name, i + 1))
            })
            .collect();
        let critiques = ctx.run_parallel(jobs)?;

        let mut targets = Vec::new();
        for (&i, o) in live.iter().zip(&critiques) {
            match usable_text(o) {
                Some(c) if c.contains(NO_ISSUES) => {}
                Some(c) => targets.push((i, c)),
                None => status = PlaygroundStatus::Partial,
            }
        }
        let jobs = targets
            .iter()
            .map(|(i, critique)| {
                let text = candidates[*i].as_deref().unwrap_or_default();
                let input = format!("Task:\n{}\n\nCandidate:\n{text}\n\nCritique:\n{critique}", ctx.task);
                Job::new(&rewriter, AgentInput::task(input)).instance(format!("{}#{}", rewriter.slot_name, i + 1))
            })
            .collect();
        for ((i, _), o) in targets.iter().zip(ctx.run_parallel(jobs)?) {
            match (o.status, o.final_answer) {
                (AgentStatus::Answered, Some(revised)) => candidates[*i] = Some(revised),
                _ => status = PlaygroundStatus::Partial,
            }
        }
    }

    let fallback = candidates.iter().flatten().next().cloned().unwrap_or_default();
    if candidates.iter().all(Option::is_none) {
        return Ok(ctx.result(fallback, PlaygroundStatus::Failed, n_rounds));
    }
    let outcome = ctx.run_agent(Job::new(
        &selector,
        AgentInput::task(selector_input(&ctx.task, &candidates)),
    ))?;
    if outcome.status != AgentStatus::Answered {
        return Ok(ctx.result(fallback, PlaygroundStatus::Failed, n_rounds));
    }
    let choice = outcome.final_answer.as_deref().and_then(parse_choice);
    match choice.and_then(|k| candidates.get(k.wrapping_sub(1)).cloned().flatten()) {
        Some(chosen) => Ok(ctx.result(chosen, status, n_rounds)),
        None => Ok(ctx.result(fallback, PlaygroundStatus::Partial, n_rounds)),
    }
}

//! Prefetch, draft, then rounds of parallel improvement. Each round the
//! improvers propose revisions of the current solution, an evaluator scores
//! each proposal with a `SCORE: <real>` line, and the best proposal becomes
//! the current solution. Rounds are promoted to the cache as they finish and
//! the run's wisdom at the end.

use crate::agent::{AgentInput, AgentStatus};
use crate::playground::patterns::{parse_score, select_best};
use crate::playground::{Job, ParamType, PlaygroundContext, PlaygroundDefinition, PlaygroundError};
use crate::playground::{PlaygroundResult, PlaygroundStatus};

pub const DEFAULT_MAX_ROUNDS: u32 = 20;

pub fn definition() -> PlaygroundDefinition {
    PlaygroundDefinition::new("draft_and_improve", "Draft once, improve in parallel rounds.", run)
        .param("max_rounds", ParamType::Integer)
        .param("branches", ParamType::Integer)
        .param("target_score", ParamType::Real)
        .role("drafter", 1, 1)
        .role("improver", 1, usize::MAX)
        .role("evaluator", 1, 1)
        .role("distiller", 0, 1)
}

fn run(ctx: &mut PlaygroundContext) -> Result<PlaygroundResult, PlaygroundError> {
    let max_rounds = ctx.param_u32("max_rounds", DEFAULT_MAX_ROUNDS, 1)?;
    let configured = ctx.slots_with_role("improver").len() as u32;
    let branches = ctx.param_u32("branches", if configured > 1 { configured } else { 2 }, 1)?;
    let target = ctx.param_f64("target_score");
    let (drafter, evaluator) = (ctx.slot_with_role("drafter")?, ctx.slot_with_role("evaluator")?);
    let improvers = ctx.instances("improver", branches)?;

    let wisdom = ctx.services.cache.prefetch(&ctx.task)?;
    let draft_input = AgentInput {
        task: ctx.task.clone(),
        notes: wisdom.iter().map(|w| format!("Prior wisdom:\n{w}")).collect(),
    };
    let draft = ctx.run_agent(Job::new(&drafter, draft_input))?;
    let Some(mut current) = draft.final_answer.filter(|_| draft.status == AgentStatus::Answered) else {
        return Ok(ctx.result(String::new(), PlaygroundStatus::Failed, 0));
    };
    let (mut current_score, mut rounds_used, mut status) = (None::<f64>, 0, PlaygroundStatus::Ok);

    for round in 1..=max_rounds {
        rounds_used = round;
        let input = format!("Task:\n{}\n\nCurrent solution:\n{current}", ctx.task);
        let jobs = improvers
            .iter()
            .map(|(slot, inst)| Job::new(slot, AgentInput::task(input.clone())).instance(inst.clone()))
            .collect();
        let proposals: Vec<Option<String>> = ctx
            .run_parallel(jobs)?
            .into_iter()
            .map(|o| o.final_answer.filter(|_| o.status == AgentStatus::Answered))
            .collect();

        let evaluated: Vec<(usize, String)> = proposals
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.clone().map(|p| (i, p)))
            .collect();
        let jobs = evaluated
            .iter()
            .map(|(i, p)| {
                let input = format!("Task:\n{}\n\nProposal from {}:\n{p}", ctx.task, improvers[*i].1);
                Job::new(&evaluator, AgentInput::task(input))
                    .instance(format!("{}#{}", evaluator.slot_name, improvers[*i].1))
            })
            .collect();
        let mut scores: Vec<(String, f64)> = improvers.iter().map(|(_, n)| (n.clone(), f64::NEG_INFINITY)).collect();
        let mut evaluator_failed = false;
        for ((i, _), o) in evaluated.iter().zip(ctx.run_parallel(jobs)?) {
            match o.status {
                AgentStatus::Error | AgentStatus::Timeout => evaluator_failed = true,
                _ => {
                    scores[*i].1 = o
                        .last_response
                        .as_deref()
                        .and_then(parse_score)
                        .unwrap_or(f64::NEG_INFINITY)
                }
            }
        }
        if evaluator_failed {
            ctx.promote_round(round, &format!("evaluator failed; kept current solution\n{current}"))?;
            status = PlaygroundStatus::Partial;
            break;
        }

        let findings = match select_best(&scores) {
            Some(best) => {
                current = proposals[best].clone().unwrap_or_default();
                current_score = Some(scores[best].1);
                format!("adopted {} with score {}\n{current}", scores[best].0, scores[best].1)
            }
            None => format!("no proposal scored; kept current solution\n{current}"),
        };
        ctx.promote_round(round, &findings)?;
        if matches!((target, current_score), (Some(t), Some(s)) if s >= t) {
            break;
        }
    }

    let score = current_score
        .map(|s| s.to_string())
        .unwrap_or_else(|| "unscored".into());
    let mut wisdom = format!(
        "Task:\n{}\n\nBest solution after {rounds_used} round(s), score {score}:\n{current}",
        ctx.task
    );
    if let Some(distiller) = ctx.optional_slot("distiller") {
        let o = ctx.run_agent(Job::new(&distiller, AgentInput::task(wisdom.clone())))?;
        if let (AgentStatus::Answered, Some(text)) = (o.status, o.final_answer) {
            wisdom = text;
        }
    }
    ctx.promote_run(&wisdom)?;
    Ok(ctx.result(current, status, rounds_used))
}

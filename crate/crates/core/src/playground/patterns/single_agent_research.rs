//! One agent with the retrieval tool pack and a research system prompt. The
//! engine's critique cycle supplies the reflect-and-refine loop.

use crate::agent::{AgentInput, AgentStatus};
use crate::playground::{Job, ParamType, PlaygroundContext, PlaygroundDefinition, PlaygroundError};
use crate::playground::{PlaygroundResult, PlaygroundStatus};

pub const DEFAULT_TOOL_PACK: [&str; 3] = ["web_search", "web_fetch", "pdf_extract"];

pub const RESEARCH_PROMPT: &str = "You are a research agent. Search for relevant sources, read them with \
the fetch and PDF tools, reflect on what they establish, and refine your understanding before answering. \
Ground every claim in a source you retrieved and cite its URL.";

pub fn definition() -> PlaygroundDefinition {
    PlaygroundDefinition::new("single_agent_research", "One retrieval-equipped agent.", run)
        .param("tool_pack", ParamType::TextList)
        .role("researcher", 1, 1)
}

fn run(ctx: &mut PlaygroundContext) -> Result<PlaygroundResult, PlaygroundError> {
    let mut slot = ctx.slot_with_role("researcher")?;
    let pack = ctx
        .param_strings("tool_pack")
        .unwrap_or_else(|| DEFAULT_TOOL_PACK.iter().map(|s| s.to_string()).collect());
    if pack.is_empty() {
        return Err(PlaygroundError::ConfigError("tool_pack is empty".into()));
    }
    if let Some(missing) = pack.iter().find(|t| !ctx.services.tools.contains(t)) {
        return Err(PlaygroundError::ConfigError(format!(
            "tool_pack names unknown tool `{missing}`"
        )));
    }
    for tool in pack {
        if !slot.spec.tool_names.contains(&tool) {
            slot.spec.tool_names.push(tool);
        }
    }
    slot.spec.system_prompt = match slot.spec.system_prompt.trim() {
        "" => RESEARCH_PROMPT.to_string(),
        own => format!("{RESEARCH_PROMPT}\n\n{own}"),
    };

    let outcome = ctx.run_agent(Job::new(&slot, AgentInput::task(ctx.task.clone())))?;
    let (answer, status) = match outcome.status {
        AgentStatus::Answered => (outcome.final_answer.unwrap_or_default(), PlaygroundStatus::Ok),
        AgentStatus::MaxTurns | AgentStatus::BudgetExhausted => {
            (outcome.last_response.unwrap_or_default(), PlaygroundStatus::Partial)
        }
        _ => (String::new(), PlaygroundStatus::Failed),
    };
    Ok(ctx.result(answer, status, 1))
}

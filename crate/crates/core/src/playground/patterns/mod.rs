//! Built-in collaboration patterns. Each file holds one workflow and its
//! definition; [`register_builtins`] is the startup hook that adds them.

mod draft_and_improve;
mod parallel_explore;
mod planner_executor;
mod sequential_handoff;
mod single_agent_research;
mod solve_critique_rewrite_select;

use std::sync::OnceLock;

use regex::Regex;

use super::{PlaygroundDefinition, PlaygroundError, PlaygroundRegistry};

pub use draft_and_improve::DEFAULT_MAX_ROUNDS as DRAFT_AND_IMPROVE_MAX_ROUNDS;
pub use planner_executor::DEFAULT_MAX_ROUNDS as PLANNER_EXECUTOR_MAX_ROUNDS;
pub use single_agent_research::{DEFAULT_TOOL_PACK, RESEARCH_PROMPT};

/// Source files of the built-in workflows, for line-count checks.
pub const PATTERN_SOURCES: [(&str, &str); 6] = [
    ("sequential_handoff", include_str!("sequential_handoff.rs")),
    ("parallel_explore", include_str!("parallel_explore.rs")),
    (
        "solve_critique_rewrite_select",
        include_str!("solve_critique_rewrite_select.rs"),
    ),
    ("planner_executor", include_str!("planner_executor.rs")),
    ("draft_and_improve", include_str!("draft_and_improve.rs")),
    ("single_agent_research", include_str!("single_agent_research.rs")),
];

pub fn definitions() -> Vec<PlaygroundDefinition> {
    vec![
        sequential_handoff::definition(),
        parallel_explore::definition(),
        solve_critique_rewrite_select::definition(),
        planner_executor::definition(),
        draft_and_improve::definition(),
        single_agent_research::definition(),
    ]
}

pub fn register_builtins(registry: &mut PlaygroundRegistry) -> Result<(), PlaygroundError> {
    definitions().into_iter().try_for_each(|d| registry.register(d))
}

/// The real number on the last `SCORE:` line, if any.
pub fn parse_score(text: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re =
        RE.get_or_init(|| Regex::new(r"(?m)^\s*SCORE:\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$").unwrap());
    re.captures_iter(text)
        .last()
        .and_then(|c| c[1].parse::<f64>().ok())
        .filter(|s| s.is_finite())
}

/// Index of the highest score; ties go to the lexicographically lowest name.
/// `None` when every score is negative infinity.
pub fn select_best(scored: &[(String, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (name, score)) in scored.iter().enumerate() {
        if *score == f64::NEG_INFINITY || score.is_nan() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (bname, bscore) = &scored[b];
                if *score > *bscore || (*score == *bscore && name < bname) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

//! Shared rig for integration tests: in-memory scripts, the fixture corpus,
//! a scratch cache and a real recorder in a temporary directory.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use evo_core::agent::{AgentServices, AgentSpec};
use evo_core::llm::{LlmGateway, ModelProfile, Script};
use evo_core::playground::{
    AgentSlot, CognitiveCache, PlaygroundError, PlaygroundRegistry, PlaygroundResult, PlaygroundServices,
};
use evo_core::skills::SkillIndex;
use evo_core::tools::{register_builtins, FixtureWeb, ToolLimits, ToolRegistry, BUILTIN_TOOLS};
use evo_core::trajectory::{replay, Recorder, ReplayReport, TrajectoryEvent};
use serde_json::{json, Value};
use tempfile::TempDir;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// A profile whose every call fails: nothing listens on port 1.
pub const DOWN: &str = "down";

pub struct Rig {
    pub dir: TempDir,
    pub gateway: LlmGateway,
    pub tools: ToolRegistry,
    pub skills: SkillIndex,
    pub cache: CognitiveCache,
    pub recorder: Recorder,
    pub limits: ToolLimits,
    pub seed: u64,
}

impl Rig {
    /// `scripts` are `(profile name, script JSON)` pairs.
    pub fn new(scripts: &[(&str, &str)]) -> Self {
        Self::with_cache(scripts, None, "run")
    }

    pub fn with_cache(scripts: &[(&str, &str)], cache_root: Option<&Path>, run_id: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut gateway = LlmGateway::new();
        for (name, text) in scripts {
            gateway.register_script(*name, Script::parse(text).unwrap()).unwrap();
        }
        gateway
            .register_profile(ModelProfile::http(DOWN, "http://127.0.0.1:1", "none"))
            .unwrap();
        let workspace = dir.path().join("workspace");
        std::fs::create_dir_all(&workspace).unwrap();
        let mut tools = ToolRegistry::new(workspace);
        let web = Arc::new(FixtureWeb::load(&fixtures().join("corpus.json")).unwrap());
        let names: Vec<String> = BUILTIN_TOOLS.iter().map(|s| s.to_string()).collect();
        register_builtins(&mut tools, &names, web).unwrap();
        let cache_root = cache_root
            .map(Path::to_path_buf)
            .unwrap_or_else(|| dir.path().join("cache"));
        let cache = CognitiveCache::open(cache_root, run_id).unwrap();
        let recorder = Recorder::open(&dir.path().join("trajectory.jsonl"), run_id, json!({})).unwrap();
        Self {
            dir,
            gateway,
            tools,
            skills: SkillIndex::default(),
            cache,
            recorder,
            limits: ToolLimits {
                timeout_ms: 10_000,
                output_cap_chars: 4_096,
            },
            seed: 7,
        }
    }

    pub fn services(&self) -> PlaygroundServices<'_> {
        PlaygroundServices {
            gateway: &self.gateway,
            tools: &self.tools,
            skills: &self.skills,
            sink: &self.recorder,
            cache: &self.cache,
            limits: self.limits,
            deadline: None,
            seed: self.seed,
        }
    }

    pub fn agent_services(&self) -> AgentServices<'_> {
        AgentServices {
            gateway: &self.gateway,
            tools: &self.tools,
            skills: &self.skills,
            sink: &self.recorder,
            limits: self.limits,
            deadline: None,
        }
    }

    pub fn run(
        &self,
        playground: &str,
        task: &str,
        params: Value,
        slots: Vec<AgentSlot>,
    ) -> Result<PlaygroundResult, PlaygroundError> {
        let params: BTreeMap<String, Value> = serde_json::from_value(params).unwrap();
        PlaygroundRegistry::with_builtins().run(playground, task, params, slots, self.services())
    }

    /// Closes the trajectory and replays it.
    pub fn finish(&self) -> ReplayReport {
        self.recorder.close(json!({})).unwrap();
        replay(self.recorder.path()).unwrap()
    }

    /// Events recorded so far, parsed.
    pub fn events(&self) -> Vec<TrajectoryEvent> {
        std::fs::read_to_string(self.recorder.path())
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

pub fn slot(name: &str, role: &str, profile: &str) -> AgentSlot {
    AgentSlot::new(name, role, AgentSpec::new(name, profile))
}

pub fn slot_with(name: &str, role: &str, profile: &str, edit: impl FnOnce(&mut AgentSpec)) -> AgentSlot {
    let mut spec = AgentSpec::new(name, profile);
    edit(&mut spec);
    AgentSlot::new(name, role, spec)
}

/// A script that answers every call with `FINAL: <answer>`.
pub fn answers(answer: &str) -> String {
    json!([{ "content": format!("FINAL: {answer}") }]).to_string()
}

/// A script that never answers.
pub const NEVER: &str = r#"[{"content": "Still working on it."}]"#;

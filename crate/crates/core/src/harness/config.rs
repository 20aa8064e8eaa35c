//! YAML experiment manifests.
//!
//! Five top-level sections: `experiment`, `llm`, `tools`, `skills`,
//! `playground`. Relative paths are resolved against the manifest's
//! directory at load time, so the resolved config (and the snapshot written
//! to the trajectory) is location independent.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{AgentSpec, DEFAULT_FINAL_MARKER, DEFAULT_MAX_TURNS};
use crate::context::ContextBudget;
use crate::llm::ModelProfile;
use crate::playground::{AgentSlot, PlaygroundRegistry};
use crate::skills::LOAD_SKILL_TOOL;
use crate::tools::{McpEndpoint, BUILTIN_TOOLS, DEFAULT_OUTPUT_CAP, DEFAULT_TIMEOUT_MS};

/// Wall-clock limit applied when a manifest sets none: 24 hours.
pub const DEFAULT_MAX_WALL_SECONDS: u64 = 86_400;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    ValidationError(String),
}

fn default_max_wall_seconds() -> u64 {
    DEFAULT_MAX_WALL_SECONDS
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_output_cap() -> usize {
    DEFAULT_OUTPUT_CAP
}

fn default_max_turns() -> u32 {
    DEFAULT_MAX_TURNS
}

fn default_critique_every() -> u32 {
    1
}

fn default_final_marker() -> String {
    DEFAULT_FINAL_MARKER.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_wall_seconds")]
    pub max_wall_seconds: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Defaults to `<run_dir>/cache`; point several runs at one directory to
    /// share wisdom between them.
    #[serde(default)]
    pub cache_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmSection {
    #[serde(default)]
    pub profiles: Vec<ModelProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolsSection {
    #[serde(default)]
    pub builtin: Vec<String>,
    #[serde(default)]
    pub mcp: Vec<McpEndpoint>,
    /// JSON corpus served by `web_search`/`web_fetch`/`pdf_extract`.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_output_cap")]
    pub output_cap_chars: usize,
}

impl Default for ToolsSection {
    fn default() -> Self {
        Self {
            builtin: Vec::new(),
            mcp: Vec::new(),
            corpus: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            output_cap_chars: DEFAULT_OUTPUT_CAP,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillsSection {
    #[serde(default)]
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotConfig {
    pub slot_name: String,
    #[serde(default)]
    pub role: String,
    pub llm_profile: String,
    #[serde(default)]
    pub system_prompt: String,
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default)]
    pub skill_roots: Vec<PathBuf>,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    #[serde(default = "default_critique_every")]
    pub critique_every: u32,
    #[serde(default)]
    pub budget: ContextBudget,
    #[serde(default = "default_final_marker")]
    pub final_marker: String,
}

impl SlotConfig {
    /// An empty role defaults to the slot name.
    pub fn to_slot(&self) -> AgentSlot {
        let role = if self.role.is_empty() {
            &self.slot_name
        } else {
            &self.role
        };
        let spec = AgentSpec {
            name: self.slot_name.clone(),
            system_prompt: self.system_prompt.clone(),
            llm_profile: self.llm_profile.clone(),
            tool_names: self.tools.clone(),
            skill_roots: self.skill_roots.clone(),
            max_turns: self.max_turns,
            critique_every: self.critique_every,
            budget: self.budget,
            final_marker: self.final_marker.clone(),
        };
        AgentSlot::new(self.slot_name.clone(), role.clone(), spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaygroundSection {
    pub name: String,
    #[serde(default)]
    pub task: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub slots: Vec<SlotConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub tools: ToolsSection,
    #[serde(default)]
    pub skills: SkillsSection,
    pub playground: PlaygroundSection,
}

fn parse_error(e: serde_yaml::Error) -> ConfigError {
    let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
    ConfigError::ParseError {
        line,
        column,
        message: e.to_string(),
    }
}

/// Parses manifest text. In strict mode an unknown key anywhere is a
/// validation error; otherwise it is logged and ignored. References are not
/// checked here; see [`validate`].
pub fn parse_config(text: &str, strict: bool) -> Result<ExperimentConfig, ConfigError> {
    let mut unknown = Vec::new();
    let de = serde_yaml::Deserializer::from_str(text);
    let config: ExperimentConfig =
        serde_ignored::deserialize(de, |path| unknown.push(path.to_string())).map_err(parse_error)?;
    if let Some(first) = unknown.first() {
        if strict {
            return Err(ConfigError::ValidationError(format!("unknown key `{first}`")));
        }
        for key in &unknown {
            log::warn!("ignoring unknown key `{key}`");
        }
    }
    Ok(config)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Makes every relative path absolute against `base`. Idempotent.
    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.experiment.output_dir);
        if let Some(p) = self.experiment.cache_root.as_mut() {
            resolve(base, p);
        }
        for profile in &mut self.llm.profiles {
            if let Some(p) = profile.script_path.as_mut() {
                resolve(base, p);
            }
        }
        if let Some(p) = self.tools.corpus.as_mut() {
            resolve(base, p);
        }
        self.skills.paths.iter_mut().for_each(|p| resolve(base, p));
        for slot in &mut self.playground.slots {
            slot.skill_roots.iter_mut().for_each(|p| resolve(base, p));
        }
    }

    pub fn slots(&self) -> Vec<AgentSlot> {
        self.playground.slots.iter().map(SlotConfig::to_slot).collect()
    }

    /// The JSON form embedded in `run_start`.
    pub fn snapshot(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_snapshot(value: &Value) -> Result<Self, ConfigError> {
        serde_json::from_value(value.clone()).map_err(|e| ConfigError::ValidationError(format!("bad snapshot: {e}")))
    }
}

/// Reads, parses, resolves and validates a manifest.
pub fn load_config(path: &Path, strict: bool) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config(&text, strict)?;
    let base = path
        .canonicalize()
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    config.resolve_paths(&base);
    validate(&config, &PlaygroundRegistry::with_builtins())?;
    Ok(config)
}

fn invalid(msg: String) -> ConfigError {
    ConfigError::ValidationError(msg)
}

/// Checks every cross-reference that can be resolved without connecting to
/// anything. Tools exposed by MCP servers are only known once connected, so
/// with MCP endpoints configured unknown tool names are left to run time.
pub fn validate(config: &ExperimentConfig, registry: &PlaygroundRegistry) -> Result<(), ConfigError> {
    let exp = &config.experiment;
    if exp.name.trim().is_empty() {
        return Err(invalid("experiment.name is empty".into()));
    }
    if exp.max_wall_seconds == 0 {
        return Err(invalid("experiment.max_wall_seconds must be positive".into()));
    }

    let mut profiles = BTreeSet::new();
    for p in &config.llm.profiles {
        if !profiles.insert(p.name.as_str()) {
            return Err(invalid(format!("duplicate llm profile `{}`", p.name)));
        }
        p.validate()
            .map_err(|e| invalid(format!("llm profile `{}`: {e}", p.name)))?;
        if let Some(script) = &p.script_path {
            if !script.is_file() {
                return Err(invalid(format!(
                    "llm profile `{}`: script {} not found",
                    p.name,
                    script.display()
                )));
            }
        }
    }

    let mut tools: BTreeSet<&str> = BTreeSet::new();
    for t in &config.tools.builtin {
        if !BUILTIN_TOOLS.contains(&t.as_str()) {
            return Err(invalid(format!("unknown builtin tool `{t}`")));
        }
        if !tools.insert(t) {
            return Err(invalid(format!("builtin tool `{t}` listed twice")));
        }
    }
    if config.tools.timeout_ms == 0 {
        return Err(invalid("tools.timeout_ms must be positive".into()));
    }
    let mut aliases = BTreeSet::new();
    for m in &config.tools.mcp {
        if m.alias.trim().is_empty() || m.endpoint.trim().is_empty() {
            return Err(invalid("mcp entries need an alias and an endpoint".into()));
        }
        if !aliases.insert(m.alias.as_str()) {
            return Err(invalid(format!("duplicate mcp alias `{}`", m.alias)));
        }
    }
    if let Some(corpus) = &config.tools.corpus {
        if !corpus.is_file() {
            return Err(invalid(format!("tools.corpus {} not found", corpus.display())));
        }
    }
    for p in &config.skills.paths {
        if !p.is_dir() {
            return Err(invalid(format!("skill path {} does not exist", p.display())));
        }
    }
    if !config.skills.paths.is_empty() {
        tools.insert(LOAD_SKILL_TOOL);
    }

    let pg = &config.playground;
    let def = registry
        .get(&pg.name)
        .ok_or_else(|| invalid(format!("unknown playground `{}`", pg.name)))?;
    def.check_params(&pg.params).map_err(|e| invalid(e.to_string()))?;
    let mut names = BTreeSet::new();
    for slot in &pg.slots {
        if !names.insert(slot.slot_name.as_str()) {
            return Err(invalid(format!("duplicate slot `{}`", slot.slot_name)));
        }
        if !profiles.contains(slot.llm_profile.as_str()) {
            return Err(invalid(format!(
                "slot `{}` references unknown llm profile `{}`",
                slot.slot_name, slot.llm_profile
            )));
        }
        if config.tools.mcp.is_empty() {
            if let Some(t) = slot.tools.iter().find(|t| !tools.contains(t.as_str())) {
                return Err(invalid(format!(
                    "slot `{}` references unknown tool `{t}`",
                    slot.slot_name
                )));
            }
        }
        if let Some(r) = slot.skill_roots.iter().find(|r| !r.is_dir()) {
            return Err(invalid(format!(
                "slot `{}`: skill root {} does not exist",
                slot.slot_name,
                r.display()
            )));
        }
        slot.to_slot().spec.validate().map_err(invalid)?;
    }
    def.check_roles(&config.slots()).map_err(|e| invalid(e.to_string()))?;
    Ok(())
}

//! Single-experiment lifecycle: build the services a manifest describes, run
//! its playground under the wall-clock limit, and leave behind a bracketed
//! trajectory plus a `record.json` summary.
//!
//! Run directory layout: `<output_dir>/<run_id>/{trajectory.jsonl,
//! record.json, workspace/, cache/}`.

pub mod config;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::llm::LlmGateway;
use crate::playground::{
    CognitiveCache, PlaygroundError, PlaygroundRegistry, PlaygroundResult, PlaygroundServices, PlaygroundStatus,
};
use crate::skills::{register_load_skill, SkillIndex};
use crate::tools::{register_builtins, FixtureWeb, McpClient, ToolLimits, ToolRegistry, WebBackend};
use crate::trajectory::{EventDraft, EventKind, EventSink, Recorder};

pub use config::{load_config, parse_config, validate, ConfigError, ExperimentConfig, DEFAULT_MAX_WALL_SECONDS};

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentStatus {
    Ok,
    Partial,
    Failed,
    Error,
    Timeout,
}

impl From<PlaygroundStatus> for ExperimentStatus {
    fn from(s: PlaygroundStatus) -> Self {
        match s {
            PlaygroundStatus::Ok => ExperimentStatus::Ok,
            PlaygroundStatus::Partial => ExperimentStatus::Partial,
            PlaygroundStatus::Failed => ExperimentStatus::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub status: ExperimentStatus,
    pub final_answer: String,
    pub config_snapshot: Value,
    pub result: Option<PlaygroundResult>,
    pub run_dir: PathBuf,
    pub trajectory_path: PathBuf,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

/// Failures before the trajectory exists. Everything later is recorded.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot create run directory {path}: {source}")]
    RunDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot open trajectory: {0}")]
    Trajectory(#[from] crate::trajectory::RecorderError),
    #[error("cannot write {path}: {source}")]
    Record {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// `<name>-<utc timestamp>-<pid>-<n>`; unique within and across processes.
pub fn new_run_id(name: &str) -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::SeqCst);
    let ts = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
    format!("{}-{ts}-{}-{n}", sanitize(name), std::process::id())
}

struct Runtime {
    gateway: LlmGateway,
    tools: ToolRegistry,
    skills: Arc<SkillIndex>,
    cache: CognitiveCache,
    // Held so stdio servers stay alive for the run.
    _mcp: Vec<Arc<McpClient>>,
}

fn build_runtime(config: &ExperimentConfig, run_dir: &Path, run_id: &str) -> Result<Runtime, String> {
    let mut gateway = LlmGateway::new();
    for profile in &config.llm.profiles {
        gateway.register_profile(profile.clone()).map_err(|e| e.to_string())?;
    }

    let web: Arc<dyn WebBackend> = match &config.tools.corpus {
        Some(path) => Arc::new(FixtureWeb::load(path)?),
        None => Arc::new(FixtureWeb::default()),
    };
    let mut tools = ToolRegistry::new(run_dir.join("workspace"));
    register_builtins(&mut tools, &config.tools.builtin, web).map_err(|e| e.to_string())?;

    let skills = Arc::new(SkillIndex::discover(&config.skills.paths).map_err(|e| e.to_string())?);
    if !config.skills.paths.is_empty() {
        register_load_skill(&mut tools, Arc::clone(&skills)).map_err(|e| e.to_string())?;
    }

    let mut mcp = Vec::new();
    for endpoint in &config.tools.mcp {
        let client = Arc::new(McpClient::connect(endpoint).map_err(|e| e.to_string())?);
        client.register_into(&mut tools).map_err(|e| e.to_string())?;
        mcp.push(client);
    }

    let cache_root = config
        .experiment
        .cache_root
        .clone()
        .unwrap_or_else(|| run_dir.join("cache"));
    let cache = CognitiveCache::open(cache_root, run_id).map_err(|e| e.to_string())?;
    Ok(Runtime {
        gateway,
        tools,
        skills,
        cache,
        _mcp: mcp,
    })
}

/// Runs the manifest's playground with the built-in registry.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRecord, HarnessError> {
    run_experiment_with(config, &PlaygroundRegistry::with_builtins())
}

pub fn run_experiment_with(
    config: &ExperimentConfig,
    registry: &PlaygroundRegistry,
) -> Result<ExperimentRecord, HarnessError> {
    let started = Instant::now();
    let deadline = started.checked_add(Duration::from_secs(config.experiment.max_wall_seconds));
    let run_id = new_run_id(&config.experiment.name);
    let run_dir = config.experiment.output_dir.join(&run_id);
    for dir in [run_dir.clone(), run_dir.join("workspace")] {
        std::fs::create_dir_all(&dir).map_err(|source| HarnessError::RunDir { path: dir, source })?;
    }
    let trajectory_path = run_dir.join(TRAJECTORY_FILE);
    let snapshot = config.snapshot();
    let recorder = Recorder::open(
        &trajectory_path,
        run_id.clone(),
        json!({"config": snapshot, "seed": config.experiment.seed}),
    )?;

    let outcome = match build_runtime(config, &run_dir, &run_id) {
        Err(message) => Err((ExperimentStatus::Error, format!("setup failed: {message}"))),
        Ok(rt) => {
            let services = PlaygroundServices {
                gateway: &rt.gateway,
                tools: &rt.tools,
                skills: &rt.skills,
                sink: &recorder,
                cache: &rt.cache,
                limits: ToolLimits {
                    timeout_ms: config.tools.timeout_ms,
                    output_cap_chars: config.tools.output_cap_chars,
                },
                deadline,
                seed: config.experiment.seed,
            };
            let pg = &config.playground;
            match registry.run(&pg.name, &pg.task, pg.params.clone(), config.slots(), services) {
                Ok(result) => Ok(result),
                Err(PlaygroundError::Timeout) => Err((ExperimentStatus::Timeout, "wall-clock limit reached".into())),
                Err(e) => Err((ExperimentStatus::Error, e.to_string())),
            }
        }
    };

    let (status, result, error) = match outcome {
        Ok(result) => (result.status.into(), Some(result), None),
        Err((status, message)) => {
            let draft = EventDraft::new(EventKind::Error, json!({"message": message}));
            if let Err(e) = recorder.emit(draft) {
                log::error!("cannot record error event: {e}");
            }
            (status, None, Some(message))
        }
    };
    let final_answer = result.as_ref().map(|r| r.final_answer.clone()).unwrap_or_default();
    let rounds_used = result.as_ref().map(|r| r.rounds_used).unwrap_or(0);
    let wall_seconds = started.elapsed().as_secs_f64();
    recorder.close(json!({
        "status": status,
        "final_answer": final_answer,
        "rounds_used": rounds_used,
        "wall_seconds": wall_seconds,
    }))?;

    let record = ExperimentRecord {
        run_id,
        status,
        final_answer,
        config_snapshot: snapshot,
        result,
        run_dir: run_dir.clone(),
        trajectory_path,
        wall_seconds,
        error,
    };
    let record_path = run_dir.join(RECORD_FILE);
    let text = serde_json::to_string_pretty(&record).expect("record serializes");
    std::fs::write(&record_path, text).map_err(|source| HarnessError::Record {
        path: record_path,
        source,
    })?;
    Ok(record)
}

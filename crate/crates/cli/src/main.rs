//! `evo`: run experiments, validate manifests, list registries, replay
//! trajectories and probe MCP endpoints.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evo_core::harness::{self, ConfigError, ExperimentConfig, ExperimentStatus};
use evo_core::playground::PlaygroundRegistry;
use evo_core::skills::{SkillIndex, LOAD_SKILL_TOOL};
use evo_core::tools::{McpClient, McpEndpoint, McpTransport, ToolRegistry, BUILTIN_TOOLS};
use evo_core::trajectory::{replay, ReplayError};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "evo", version, about = "Evolving-agent orchestration runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a manifest describes.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding experiment.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "max-wall-secs")]
        max_wall_secs: Option<u64>,
        /// Ignore unknown manifest keys instead of rejecting them.
        #[arg(long)]
        lenient: bool,
    },
    /// Parse and validate a manifest without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
    /// List registered names, one per line.
    List {
        what: ListKind,
        /// Manifest whose tools or skills to list.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lenient: bool,
    },
    /// Verify a trajectory and print its per-agent transcripts.
    Replay {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Connect to an MCP server and list its tools.
    McpProbe {
        /// URL, or a command line with --stdio.
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        stdio: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ListKind {
    Playgrounds,
    Tools,
    Skills,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_USAGE,
            _ => EXIT_VALIDATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn load(path: &Path, lenient: bool) -> Result<ExperimentConfig, Failure> {
    let mut config = harness::load_config(path, !lenient)?;
    if config.experiment.cache_root.is_none() {
        if let Some(home) = std::env::var_os("EVO_HOME").filter(|h| !h.is_empty()) {
            config.experiment.cache_root = Some(PathBuf::from(home));
        }
    }
    Ok(config)
}

fn absolute(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
    }
}

fn run(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    max_wall: Option<u64>,
    lenient: bool,
) -> Result<(), Failure> {
    let mut config = load(config, lenient)?;
    if let Some(out) = out {
        config.experiment.output_dir = absolute(out);
    }
    if let Some(seed) = seed {
        config.experiment.seed = seed;
    }
    if let Some(secs) = max_wall {
        config.experiment.max_wall_seconds = secs;
    }
    harness::validate(&config, &PlaygroundRegistry::with_builtins())?;
    let record = harness::run_experiment(&config).map_err(|e| Failure::runtime(e.to_string()))?;
    println!("{}", record.run_dir.join(harness::RECORD_FILE).display());
    match record.status {
        ExperimentStatus::Ok | ExperimentStatus::Partial => Ok(()),
        other => Err(Failure::runtime(format!(
            "run {} ended with status {}{}",
            record.run_id,
            serde_json::to_value(other).unwrap_or_default().as_str().unwrap_or("?"),
            record.error.map(|e| format!(": {e}")).unwrap_or_default()
        ))),
    }
}

fn list(what: ListKind, config: Option<&Path>, lenient: bool) -> Result<(), Failure> {
    let config = config.map(|c| load(c, lenient)).transpose()?;
    let names: Vec<String> = match what {
        ListKind::Playgrounds => PlaygroundRegistry::with_builtins().names(),
        ListKind::Tools => match &config {
            None => BUILTIN_TOOLS.iter().map(|s| s.to_string()).collect(),
            Some(c) => {
                let mut registry = ToolRegistry::new(std::env::temp_dir());
                let web = std::sync::Arc::new(evo_core::tools::FixtureWeb::default());
                evo_core::tools::register_builtins(&mut registry, &c.tools.builtin, web)
                    .map_err(|e| Failure::runtime(e.to_string()))?;
                let mut names = registry.names();
                if !c.skills.paths.is_empty() {
                    names.push(LOAD_SKILL_TOOL.to_string());
                }
                for endpoint in &c.tools.mcp {
                    let client = McpClient::connect(endpoint).map_err(|e| Failure::runtime(e.to_string()))?;
                    let bindings = client
                        .list_descriptors(&registry)
                        .map_err(|e| Failure::runtime(e.to_string()))?;
                    names.extend(bindings.into_iter().map(|b| b.descriptor.name));
                }
                names.sort();
                names
            }
        },
        ListKind::Skills => {
            let Some(c) = &config else {
                return Err(Failure {
                    code: EXIT_USAGE,
                    message: "list skills needs --config".into(),
                });
            };
            SkillIndex::discover(&c.skills.paths)
                .map_err(|e| Failure::runtime(e.to_string()))?
                .names()
        }
    };
    for name in names {
        println!("{name}");
    }
    Ok(())
}

fn replay_cmd(path: &Path) -> Result<(), Failure> {
    let report = replay(path).map_err(|e| match e {
        ReplayError::Io(_) => Failure {
            code: EXIT_USAGE,
            message: e.to_string(),
        },
        other => Failure::runtime(other.to_string()),
    })?;
    println!("complete: {}", report.complete);
    println!("events: {}", report.event_count);
    for v in &report.violations {
        println!("violation: {v}");
    }
    for (agent, lines) in &report.transcripts {
        println!("\n== {agent}");
        for line in lines {
            println!("{line}");
        }
    }
    if report.complete {
        Ok(())
    } else {
        Err(Failure::runtime(format!("{} violation(s)", report.violations.len())))
    }
}

fn probe(endpoint: &str, stdio: bool) -> Result<(), Failure> {
    let endpoint = McpEndpoint {
        alias: "probe".into(),
        transport: if stdio { McpTransport::Stdio } else { McpTransport::Http },
        endpoint: endpoint.into(),
    };
    let client = McpClient::connect(&endpoint).map_err(|e| Failure::runtime(e.to_string()))?;
    let tools = client.list_tools().map_err(|e| Failure::runtime(e.to_string()))?;
    for t in tools {
        println!("{}\t{}\t{}", t.name, t.description, t.input_schema);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVO_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_USAGE)
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            max_wall_secs,
            lenient,
        } => run(&config, out, seed, max_wall_secs, lenient),
        Command::Validate { config, lenient } => load(&config, lenient).map(|_| println!("ok")),
        Command::List { what, config, lenient } => list(what, config.as_deref(), lenient),
        Command::Replay { trajectory } => replay_cmd(&trajectory),
        Command::McpProbe { endpoint, stdio } => probe(&endpoint, stdio),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

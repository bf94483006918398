//! `validate` and `run`.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use aad_core::engine::{Runtime, SessionManager, SessionOptions, StepOutcome};
use aad_core::gateway::GatewayMode;
use aad_core::model::{validate_with, TopologyGraph};
use aad_core::plugin::PluginRegistry;
use aad_core::trace::TraceKind;
use aad_core::Value;
use aad_server::project::read_graph;
use aad_server::{Project, ProjectError, RuntimeOverrides};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{print_json, print_table};

/// A graph named on the command line, with the project around it if any.
pub struct Target {
    pub graph: TopologyGraph,
    pub project: Option<Project>,
}

fn project_at(start: &Path) -> CliResult<Option<Project>> {
    match Project::find(start) {
        Some(dir) => Ok(Some(Project::load(&dir)?)),
        None => Ok(None),
    }
}

/// `arg` is a graph file, or else a graph name in the project found from
/// the working directory.
pub fn resolve(arg: &str) -> CliResult<Target> {
    let path = Path::new(arg);
    if path.is_file() {
        let graph = read_graph(path)?;
        return Ok(Target {
            graph,
            project: project_at(path)?,
        });
    }
    let cwd = std::env::current_dir()?;
    if let Some(project) = project_at(&cwd)? {
        if let Some(graph) = project.graph(arg) {
            return Ok(Target {
                graph: graph.clone(),
                project: Some(project),
            });
        }
    }
    Err(CliError::new("FileNotFound", format!("no graph file or project graph named `{arg}`")))
}

fn plugins(project: Option<&Project>) -> Result<PluginRegistry, ProjectError> {
    match project {
        Some(p) => p.plugins(),
        None => Ok(PluginRegistry::new()),
    }
}

pub fn validate(arg: &str, json: bool) -> CliResult<ExitCode> {
    let target = resolve(arg)?;
    let registry = plugins(target.project.as_ref())?;
    let report = validate_with(&target.graph, Some(&registry));
    if json {
        print_json(&report);
    } else if report.ok {
        println!("ok");
    } else {
        let rows: Vec<Vec<String>> = report
            .issues
            .iter()
            .map(|i| {
                vec![
                    format!("{:?}", i.code),
                    i.node.clone().unwrap_or_else(|| "-".into()),
                    i.message.clone(),
                ]
            })
            .collect();
        print_table(&["CODE", "NODE", "MESSAGE"], &rows);
    }
    Ok(if report.ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

pub struct RunArgs {
    pub graph: String,
    pub input: String,
    pub trace: Option<PathBuf>,
    pub seed: u64,
    pub answers: Option<String>,
    pub mode: Option<String>,
    pub json: bool,
}

fn parse_json(what: &str, text: &str) -> CliResult<Value> {
    Value::from_json_str(text).map_err(|e| CliError::new("BadArgument", format!("{what}: {e}")))
}

pub fn run(args: RunArgs) -> CliResult<ExitCode> {
    let target = resolve(&args.graph)?;
    let input = parse_json("--input", &args.input)?;
    let mut answers: VecDeque<Value> = match &args.answers {
        None => VecDeque::new(),
        Some(text) => match parse_json("--answers", text)? {
            Value::Array(items) => items.into_iter().collect(),
            _ => return Err(CliError::new("BadArgument", "--answers must be a JSON array")),
        },
    };
    let mode = args
        .mode
        .as_deref()
        .map(|m| m.parse::<GatewayMode>())
        .transpose()
        .map_err(|e| CliError::new("BadArgument", e.to_string()))?;
    let overrides = RuntimeOverrides {
        seed: Some(args.seed),
        mode,
    };
    let runtime = match &target.project {
        Some(project) => project.runtime(overrides)?,
        None => {
            let gateway = aad_server::project::build_gateway(&Default::default(), None, None, overrides)?;
            Runtime::new(Arc::new(gateway))
        }
    };
    let manager = SessionManager::new(Arc::new(runtime)).with_seed(args.seed);
    let options = SessionOptions {
        llm_seed: Some(args.seed),
        ..SessionOptions::default()
    };
    let shared = manager.start(target.graph, input, options)?;
    let mut session = shared.lock().expect("session lock");
    let mut shown = 0;
    let outcome = loop {
        let outcome = session.continue_run()?;
        for ev in &session.trace()[shown..] {
            if ev.kind == TraceKind::Display {
                eprintln!("[{}] {}", ev.node.as_deref().unwrap_or("-"), ev.data.to_json());
            }
        }
        shown = session.trace().len();
        match outcome {
            StepOutcome::NeedsInput { node, prompt } => match answers.pop_front() {
                Some(answer) => {
                    session.provide_input(answer)?;
                }
                None => {
                    break Err(CliError::new(
                        "NeedsInput",
                        format!("node `{node}` asks `{}` and no answers are left", prompt.question),
                    ))
                }
            },
            StepOutcome::Done(value) => break Ok(value),
            StepOutcome::Error(error) => break Err(CliError::new(&error.kind, error.to_string())),
            StepOutcome::Paused(_) | StepOutcome::Advanced(_) => {}
        }
    };
    if let Some(path) = &args.trace {
        session.trace_log().write(path)?;
    }
    let value = outcome?;
    if args.json {
        print_json(&json!({
            "session": session.id(),
            "result": value.to_json(),
            "usage": session.usage(),
        }));
    } else {
        println!("{}", value.to_canonical_json());
    }
    Ok(ExitCode::SUCCESS)
}

//! `aad`: validate, run, debug, sync, package and serve agents from the
//! command line.
//!
//! stdout carries data and stderr carries diagnostics. Exit codes: 0 ok,
//! 1 operational error, 2 invalid input or sync conflicts.

mod error;
mod graph_cmds;
mod output;
mod service_cmds;
mod sync_cmd;
mod trace_cmds;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "aad", version, about = "Build, debug and ship topology-based agents")]
struct Cli {
    /// Print JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a graph file and print its validation report.
    Validate {
        graph: String,
    },
    /// Run a graph to completion and print its result.
    Run {
        /// Graph file, or a graph name in the current project.
        graph: String,
        /// Input payload as JSON.
        #[arg(long, default_value = "null")]
        input: String,
        /// Write the session trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Seed for the mock provider and session ids.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON array of answers for interaction nodes, used in order.
        #[arg(long)]
        answers: Option<String>,
        /// Gateway mode: live, record, replay, mimic-first or mock.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Start the debug service for the current project.
    Debug {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        project: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconcile a graph with its agent script in both directions.
    Sync {
        /// A `.topo.json` graph or its `.agent.aad` script.
        path: PathBuf,
    },
    /// Bundle the current project for deployment.
    Package {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        project: Option<PathBuf>,
    },
    /// Serve a bundle over the debug protocol.
    Serve {
        bundle: PathBuf,
        /// Allow breakpoints and stepping.
        #[arg(long)]
        dev: bool,
        #[arg(long, default_value_t = aad_server::project::DEFAULT_DEBUG_PORT)]
        port: u16,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Manage plugins.
    Plugin {
        #[command(subcommand)]
        action: PluginAction,
    },
    /// Work with exported traces.
    Trace {
        #[command(subcommand)]
        action: TraceAction,
    },
    /// Usage accounting for mimic and replay answers.
    Mimic {
        #[command(subcommand)]
        action: MimicAction,
    },
}

#[derive(Debug, Subcommand)]
enum PluginAction {
    /// List the components of the project's plugins.
    List {
        #[arg(long)]
        project: Option<PathBuf>,
    },
    /// Copy a plugin into the project and register it.
    Install {
        path: PathBuf,
        #[arg(long)]
        project: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TraceAction {
    /// Check a trace for well-formedness.
    Check { file: PathBuf },
}

#[derive(Debug, Subcommand)]
enum MimicAction {
    /// Live calls and tokens saved across traces.
    Savings {
        traces: Vec<PathBuf>,
        /// Traces of the same work done fully live.
        #[arg(long, num_args = 1..)]
        baseline: Vec<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> CliResult<ExitCode> {
    let json = cli.json;
    match cli.command {
        Command::Validate { graph } => graph_cmds::validate(&graph, json),
        Command::Run {
            graph,
            input,
            trace,
            seed,
            answers,
            mode,
        } => graph_cmds::run(graph_cmds::RunArgs {
            graph,
            input,
            trace,
            seed,
            answers,
            mode,
            json,
        }),
        Command::Debug { port, project, seed } => service_cmds::debug(project, port, seed, json),
        Command::Sync { path } => sync_cmd::sync(&path, json),
        Command::Package { out, project } => service_cmds::package(project, &out, json),
        Command::Serve {
            bundle,
            dev,
            port,
            seed,
        } => service_cmds::serve(&bundle, dev, port, seed, json),
        Command::Plugin { action } => match action {
            PluginAction::List { project } => service_cmds::plugin_list(project, json),
            PluginAction::Install { path, project } => service_cmds::plugin_install(&path, project, json),
        },
        Command::Trace {
            action: TraceAction::Check { file },
        } => trace_cmds::check(&file, json),
        Command::Mimic {
            action: MimicAction::Savings { traces, baseline },
        } => trace_cmds::savings(&traces, &baseline, json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {}", e.code, e.message.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

//! `sync`: keeps `<stem>.topo.json` and `<stem>.agent.aad` in step. The
//! graph as of the last successful sync is kept under `.aad/sync/` and
//! serves as the common ancestor for three-way merges.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aad_core::code_sync::{self, ChangeItem, ChangeOrigin};
use aad_core::model::TopologyGraph;
use aad_core::topo_format;
use aad_server::project::read_graph;
use aad_server::Project;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{print_json, print_table};

pub const ANCESTOR_DIR: &str = ".aad/sync";

struct Pair {
    graph: PathBuf,
    script: PathBuf,
    ancestor: PathBuf,
}

fn pair(path: &Path) -> CliResult<Pair> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::new("BadArgument", format!("{} is not a file path", path.display())))?;
    let stem = name
        .strip_suffix(code_sync::EXTENSION)
        .or_else(|| name.strip_suffix(topo_format::EXTENSION))
        .ok_or_else(|| {
            CliError::new(
                "BadArgument",
                format!("expected a {} or {} file", topo_format::EXTENSION, code_sync::EXTENSION),
            )
        })?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let root = Project::find(dir).unwrap_or_else(|| dir.to_path_buf());
    Ok(Pair {
        graph: dir.join(format!("{stem}{}", topo_format::EXTENSION)),
        script: dir.join(format!("{stem}{}", code_sync::EXTENSION)),
        ancestor: root.join(ANCESTOR_DIR).join(format!("{stem}{}", topo_format::EXTENSION)),
    })
}

fn write_graph(path: &Path, graph: &TopologyGraph) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = topo_format::serialize(graph).map_err(|e| CliError::new(e.code(), e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn created(what: &Path, json: bool) -> ExitCode {
    if json {
        print_json(&json!({"created": what, "changes": [], "conflicts": []}));
    } else {
        println!("created {}", what.display());
    }
    ExitCode::SUCCESS
}

pub fn sync(path: &Path, json: bool) -> CliResult<ExitCode> {
    let p = pair(path)?;
    match (p.graph.is_file(), p.script.is_file()) {
        (false, false) => Err(CliError::new(
            "FileNotFound",
            format!("neither {} nor {} exists", p.graph.display(), p.script.display()),
        )),
        (true, false) => {
            let graph = read_graph(&p.graph)?;
            std::fs::write(&p.script, code_sync::generate(&graph)?)?;
            write_graph(&p.ancestor, &graph)?;
            Ok(created(&p.script, json))
        }
        (false, true) => {
            let graph = code_sync::parse(&std::fs::read_to_string(&p.script)?)?;
            write_graph(&p.graph, &graph)?;
            write_graph(&p.ancestor, &graph)?;
            Ok(created(&p.graph, json))
        }
        (true, true) => {
            let graph = read_graph(&p.graph)?;
            let ancestor = if p.ancestor.is_file() {
                read_graph(&p.ancestor)?
            } else {
                graph.clone()
            };
            let text = std::fs::read_to_string(&p.script)?;
            let result = code_sync::sync_with_ancestor(&ancestor, &graph, &text)?;
            report(&result, json);
            if !result.conflicts.is_empty() {
                return Ok(ExitCode::from(2));
            }
            if result.graph != graph {
                write_graph(&p.graph, &result.graph)?;
            }
            if result.script != text {
                std::fs::write(&p.script, &result.script)?;
            }
            write_graph(&p.ancestor, &result.graph)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn report(result: &code_sync::SyncResult, json: bool) {
    if json {
        print_json(&json!({"changes": result.changes, "conflicts": result.conflicts}));
        return;
    }
    if !result.conflicts.is_empty() {
        let rows: Vec<Vec<String>> = result
            .conflicts
            .iter()
            .map(|c| {
                vec![
                    c.node.clone(),
                    c.key.clone(),
                    c.graph_value.to_canonical_json(),
                    c.text_value.to_canonical_json(),
                ]
            })
            .collect();
        print_table(&["NODE", "KEY", "GRAPH", "TEXT"], &rows);
        return;
    }
    if result.changes.is_empty() {
        println!("in sync");
        return;
    }
    let rows: Vec<Vec<String>> = result
        .changes
        .iter()
        .map(|c| {
            let origin = match c.origin {
                ChangeOrigin::FromText => "text",
                ChangeOrigin::FromGraph => "graph",
            };
            let what = match &c.item {
                ChangeItem::Edit { edit } => serde_json::to_string(edit).expect("edit serializes"),
                ChangeItem::TextRegion { anchor, line } => format!("rewrote {anchor} at line {line}"),
            };
            vec![origin.to_string(), what]
        })
        .collect();
    print_table(&["FROM", "CHANGE"], &rows);
}

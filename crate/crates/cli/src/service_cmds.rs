//! Project-level commands: `debug`, `package`, `serve` and `plugin`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use aad_core::plugin::{PluginManifest, MANIFEST_FILE};
use aad_server::project::PROJECT_FILE;
use aad_server::{
    package as package_bundle, serve as serve_service, serve_bundle, DebugService, Endpoint, Project,
    RuntimeOverrides, ServiceConfig, ServiceHandle, ServiceMode,
};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{print_json, print_table};

fn project_dir(explicit: Option<PathBuf>) -> CliResult<PathBuf> {
    let start = match explicit {
        Some(p) => p,
        None => std::env::current_dir()?,
    };
    Project::find(&start)
        .ok_or_else(|| CliError::new("NoProject", format!("no {PROJECT_FILE} at or above {}", start.display())))
}

fn announce(handle: &ServiceHandle, extra: serde_json::Value, json: bool) {
    let ws = handle.ws_addr.map(|a| format!("ws://{a}{}", aad_server::transport::WS_PATH));
    if json {
        let mut out = json!({"tcp": handle.tcp_addr.to_string(), "ws": ws});
        if let (Some(o), Some(e)) = (out.as_object_mut(), extra.as_object()) {
            o.extend(e.clone());
        }
        println!("{out}");
    } else {
        println!("listening on tcp {}", handle.tcp_addr);
        if let Some(ws) = ws {
            println!("websocket {ws}");
        }
    }
    let _ = std::io::stdout().flush();
}

pub fn debug(project: Option<PathBuf>, port: Option<u16>, seed: Option<u64>, json: bool) -> CliResult<ExitCode> {
    let dir = project_dir(project)?;
    let project = Project::load(&dir)?;
    let runtime = project.runtime(RuntimeOverrides { seed, mode: None })?;
    let service = DebugService::new(ServiceConfig {
        runtime: Arc::new(runtime),
        entry_graph: project.config.entry_graph.clone(),
        mode: ServiceMode::Dev,
        seed,
    });
    let port = port.unwrap_or(project.config.debug.port);
    let handle = serve_service(Arc::new(service), Endpoint::local(port))?;
    announce(&handle, json!({"entry_graph": project.config.entry_graph}), json);
    handle.wait();
    Ok(ExitCode::SUCCESS)
}

pub fn package(project: Option<PathBuf>, out: &Path, json: bool) -> CliResult<ExitCode> {
    let dir = project_dir(project)?;
    let manifest = package_bundle(&dir, out)?;
    if json {
        print_json(&manifest);
    } else {
        println!("packaged {} into {}", manifest.name, out.display());
        println!("graphs: {}", manifest.graphs.join(", "));
        if !manifest.plugins.is_empty() {
            println!("plugins: {}", manifest.plugins.join(", "));
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn serve(bundle: &Path, dev: bool, port: u16, seed: Option<u64>, json: bool) -> CliResult<ExitCode> {
    let (handle, embed) = serve_bundle(bundle, Endpoint::local(port), dev, RuntimeOverrides { seed, mode: None })?;
    announce(
        &handle,
        json!({"entry_graph": embed.entry_graph, "mode": if dev { "dev" } else { "run" }}),
        json,
    );
    handle.wait();
    Ok(ExitCode::SUCCESS)
}

pub fn plugin_list(project: Option<PathBuf>, json: bool) -> CliResult<ExitCode> {
    let project = Project::load(&project_dir(project)?)?;
    let components = project.plugins()?.list_components();
    if json {
        print_json(&components);
    } else {
        let rows: Vec<Vec<String>> = components
            .iter()
            .map(|c| vec![format!("{}/{}", c.namespace, c.name), c.version.clone(), c.description.clone()])
            .collect();
        print_table(&["COMPONENT", "VERSION", "DESCRIPTION"], &rows);
    }
    Ok(ExitCode::SUCCESS)
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let dest = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &dest)?;
        } else {
            std::fs::copy(entry.path(), dest)?;
        }
    }
    Ok(())
}

/// Copies the plugin into `<project>/plugins/<namespace>` and adds that
/// path to `plugin_paths`. The project must still load afterwards.
pub fn plugin_install(path: &Path, project: Option<PathBuf>, json: bool) -> CliResult<ExitCode> {
    let dir = project_dir(project)?;
    let source = if path.is_file() { path.parent().unwrap_or(Path::new(".")) } else { path };
    let manifest = PluginManifest::read(&source.join(MANIFEST_FILE))?;
    let rel = format!("plugins/{}", manifest.namespace);
    let dest = dir.join(&rel);
    let same = std::fs::canonicalize(source).ok() == std::fs::canonicalize(&dest).ok();
    if !same {
        if dest.exists() {
            std::fs::remove_dir_all(&dest)?;
        }
        copy_tree(source, &dest)?;
    }
    let config_path = dir.join(PROJECT_FILE);
    let mut config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&config_path)?)
        .map_err(|e| CliError::new("ConfigError", e.to_string()))?;
    let paths = config
        .as_object_mut()
        .ok_or_else(|| CliError::new("ConfigError", "project.json must be an object"))?
        .entry("plugin_paths")
        .or_insert_with(|| json!([]));
    let list = paths
        .as_array_mut()
        .ok_or_else(|| CliError::new("ConfigError", "plugin_paths must be an array"))?;
    if !list.iter().any(|p| p.as_str() == Some(rel.as_str())) {
        list.push(json!(rel));
    }
    let previous = std::fs::read_to_string(&config_path)?;
    let mut text = serde_json::to_string_pretty(&config).expect("config serializes");
    text.push('\n');
    std::fs::write(&config_path, text)?;
    let loaded = Project::load(&dir).and_then(|p| p.plugins());
    let registry = match loaded {
        Ok(r) => r,
        Err(e) => {
            std::fs::write(&config_path, previous)?;
            return Err(e.into());
        }
    };
    let count = registry
        .list_components()
        .iter()
        .filter(|c| c.namespace == manifest.namespace)
        .count();
    if json {
        print_json(&json!({"namespace": manifest.namespace, "version": manifest.version, "components": count, "path": rel}));
    } else {
        println!("installed {} {} ({count} components) at {rel}", manifest.namespace, manifest.version);
    }
    Ok(ExitCode::SUCCESS)
}

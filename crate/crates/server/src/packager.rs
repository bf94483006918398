//! Self-contained bundles: the entry graph and everything it reaches,
//! the plugins it uses and the gateway assets, under one directory.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aad_core::engine::Runtime;
use aad_core::gateway::GatewayMode;
use aad_core::model::{validate_with, NodeKind, TopologyGraph, ValidationReport};
use aad_core::plugin::PluginRegistry;
use aad_core::topo_format;
use serde::{Deserialize, Serialize};

use crate::project::{build_gateway, load_plugins, read_graph, GatewayConfig, Project, ProjectError, RuntimeOverrides};
use crate::service::{DebugService, ServiceConfig, ServiceMode};
use crate::transport::{serve, Endpoint, ServeError, ServiceHandle};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const EMBED_FILE: &str = "embed.json";
pub const RECORDS_FILE: &str = "records.ndjson";
pub const PROFILE_FILE: &str = "profile.mimic.json";
pub const BUNDLE_VERSION: &str = "0.1.0";
pub const EMBED_PROTOCOL: &str = "ndjson-v1";
/// Base URL for a live provider when serving a bundle.
pub const BASE_URL_ENV: &str = "AAD_BASE_URL";

#[derive(Debug, thiserror::Error)]
pub enum PackageError {
    #[error("graph `{0}` is not in the project")]
    MissingGraph(String),
    #[error("node `{node}` in `{graph}` calls graph `{target}`, which is not in the project")]
    UnresolvedSubAgent { graph: String, node: String, target: String },
    #[error("node `{node}` in `{graph}` needs plugin `{namespace}`, which is not loaded")]
    UnresolvedPlugin {
        graph: String,
        node: String,
        namespace: String,
    },
    #[error("graph `{graph}` is invalid: {}", .report.summary())]
    InvalidGraph { graph: String, report: ValidationReport },
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PackageError {
    pub fn code(&self) -> &'static str {
        match self {
            PackageError::MissingGraph(_) => "MissingGraph",
            PackageError::UnresolvedSubAgent { .. } => "UnresolvedSubAgent",
            PackageError::UnresolvedPlugin { .. } => "UnresolvedPlugin",
            PackageError::InvalidGraph { .. } => "InvalidGraph",
            PackageError::InvalidBundle(_) => "InvalidBundle",
            PackageError::Project(ProjectError::MissingGraph(_)) => "MissingGraph",
            PackageError::Project(e) => e.code(),
            PackageError::Serve(e) => e.code(),
            PackageError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub name: String,
    pub version: String,
    pub entry_graph: String,
    /// Paths relative to the bundle directory.
    pub graphs: Vec<String>,
    pub plugins: Vec<String>,
    pub default_mode: GatewayMode,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedInfo {
    pub endpoint: String,
    pub entry_graph: String,
    pub protocol: String,
}

fn plugin_namespace(kind: &NodeKind, config: &aad_core::Object) -> Option<String> {
    match kind {
        NodeKind::Extension { namespace, .. } => Some(namespace.clone()),
        NodeKind::Tool => config
            .get("component")
            .and_then(|c| c.as_str())
            .and_then(|c| c.split_once('/'))
            .map(|(ns, _)| ns.to_string()),
        _ => None,
    }
}

/// Graphs reachable from `entry` through SubAgent nodes, and the plugin
/// namespaces they use. Every reached graph must validate.
fn closure(
    entry: &str,
    lookup: impl Fn(&str) -> Option<TopologyGraph>,
    registry: &PluginRegistry,
) -> Result<(Vec<TopologyGraph>, BTreeSet<String>), PackageError> {
    let loaded: BTreeSet<String> = registry.namespaces().into_iter().collect();
    let mut seen = BTreeSet::from([entry.to_string()]);
    let mut queue = VecDeque::from([entry.to_string()]);
    let mut graphs = Vec::new();
    let mut namespaces = BTreeSet::new();
    while let Some(name) = queue.pop_front() {
        let graph = lookup(&name).ok_or_else(|| PackageError::MissingGraph(name.clone()))?;
        for node in graph.nodes() {
            if let Some(ns) = plugin_namespace(&node.kind, &node.config) {
                if !loaded.contains(&ns) {
                    return Err(PackageError::UnresolvedPlugin {
                        graph: name.clone(),
                        node: node.id.clone(),
                        namespace: ns,
                    });
                }
                namespaces.insert(ns);
            }
            if node.kind == NodeKind::SubAgent {
                let target = node.config_str("graph").unwrap_or_default().to_string();
                if lookup(&target).is_none() {
                    return Err(PackageError::UnresolvedSubAgent {
                        graph: name.clone(),
                        node: node.id.clone(),
                        target,
                    });
                }
                if seen.insert(target.clone()) {
                    queue.push_back(target);
                }
            }
        }
        let report = validate_with(&graph, Some(registry));
        if !report.ok {
            return Err(PackageError::InvalidGraph { graph: name, report });
        }
        graphs.push(graph);
    }
    graphs.sort_by(|a, b| a.name().cmp(b.name()));
    Ok((graphs, namespaces))
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in walkdir::WalkDir::new(from).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&dest)?;
        } else if entry.file_type().is_file() {
            std::fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Writes a bundle for the project at `project_dir` into `out_dir`.
pub fn package(project_dir: &Path, out_dir: &Path) -> Result<BundleManifest, PackageError> {
    let project = Project::load(project_dir)?;
    let registry = project.plugins()?;
    let (graphs, namespaces) = closure(
        &project.config.entry_graph,
        |name| project.graph(name).cloned(),
        &registry,
    )?;

    std::fs::create_dir_all(out_dir)?;
    for stale in ["graphs", "plugins"] {
        let dir = out_dir.join(stale);
        if dir.exists() {
            std::fs::remove_dir_all(dir)?;
        }
    }
    for stale in [BUNDLE_FILE, EMBED_FILE, RECORDS_FILE, PROFILE_FILE] {
        let file = out_dir.join(stale);
        if file.exists() {
            std::fs::remove_file(file)?;
        }
    }
    std::fs::create_dir_all(out_dir.join("graphs"))?;
    let mut graph_paths = Vec::new();
    for graph in &graphs {
        let rel = format!("graphs/{}{}", file_stem(graph.name()), topo_format::EXTENSION);
        std::fs::write(out_dir.join(&rel), topo_format::serialize_unchecked(graph))?;
        graph_paths.push(rel);
    }
    for ns in &namespaces {
        let dir = registry
            .plugin_dir(ns)
            .ok_or_else(|| PackageError::InvalidBundle(format!("plugin `{ns}` has no directory")))?;
        copy_dir(dir, &out_dir.join("plugins").join(ns))?;
    }
    let gateway = &project.config.gateway;
    if let Some(records) = &gateway.records {
        let path = project.resolve(records);
        if path.exists() {
            std::fs::copy(path, out_dir.join(RECORDS_FILE))?;
        }
    }
    if let Some(profile) = &gateway.mimic_profile {
        std::fs::copy(project.resolve(profile), out_dir.join(PROFILE_FILE))?;
    }
    let manifest = BundleManifest {
        name: project.config.name.clone(),
        version: BUNDLE_VERSION.into(),
        entry_graph: project.config.entry_graph.clone(),
        graphs: graph_paths,
        plugins: namespaces.into_iter().collect(),
        default_mode: gateway.mode,
        created_at: now_ms(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(out_dir.join(BUNDLE_FILE), text)?;
    Ok(manifest)
}

/// A bundle read back from disk with its closure re-checked.
#[derive(Debug)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub graphs: BTreeMap<String, TopologyGraph>,
    pub plugins: PluginRegistry,
}

impl Bundle {
    pub fn load(dir: &Path) -> Result<Bundle, PackageError> {
        let invalid = |m: String| PackageError::InvalidBundle(m);
        let text = std::fs::read_to_string(dir.join(BUNDLE_FILE))
            .map_err(|e| invalid(format!("{}: {e}", dir.join(BUNDLE_FILE).display())))?;
        let manifest: BundleManifest =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{BUNDLE_FILE}: {e}")))?;
        let mut graphs = BTreeMap::new();
        for rel in &manifest.graphs {
            if Path::new(rel).is_absolute() || rel.split('/').any(|p| p == "..") {
                return Err(invalid(format!("graph path `{rel}` leaves the bundle")));
            }
            let graph = read_graph(&dir.join(rel)).map_err(|e| invalid(e.to_string()))?;
            graphs.insert(graph.name().to_string(), graph);
        }
        let plugin_dirs: Vec<PathBuf> = manifest.plugins.iter().map(|ns| dir.join("plugins").join(ns)).collect();
        let plugins = load_plugins(&plugin_dirs).map_err(|e| invalid(e.to_string()))?;
        closure(&manifest.entry_graph, |n| graphs.get(n).cloned(), &plugins)
            .map_err(|e| invalid(e.to_string()))?;
        Ok(Bundle {
            dir: dir.to_path_buf(),
            manifest,
            graphs,
            plugins,
        })
    }

    pub fn runtime(&self, overrides: RuntimeOverrides) -> Result<Runtime, PackageError> {
        let config = GatewayConfig {
            mode: self.manifest.default_mode,
            base_url: std::env::var(BASE_URL_ENV).ok(),
            mimic_profile: None,
            records: None,
        };
        let optional = |f: &str| Some(self.dir.join(f)).filter(|p| p.exists());
        let gateway = build_gateway(&config, optional(RECORDS_FILE), optional(PROFILE_FILE), overrides)?;
        let mut runtime = Runtime::new(Arc::new(gateway)).with_plugins(self.plugins.clone());
        for graph in self.graphs.values() {
            runtime = runtime.with_graph(graph.clone());
        }
        runtime.work_dir = Some(self.dir.clone());
        Ok(runtime)
    }
}

/// Serves a bundle and writes `embed.json` next to `bundle.json`.
pub fn serve_bundle(
    dir: &Path,
    endpoint: Endpoint,
    dev: bool,
    overrides: RuntimeOverrides,
) -> Result<(ServiceHandle, EmbedInfo), PackageError> {
    let bundle = Bundle::load(dir)?;
    let service = DebugService::new(ServiceConfig {
        runtime: Arc::new(bundle.runtime(overrides)?),
        entry_graph: bundle.manifest.entry_graph.clone(),
        mode: if dev { ServiceMode::Dev } else { ServiceMode::Run },
        seed: overrides.seed,
    });
    let handle = serve(Arc::new(service), endpoint)?;
    let embed = EmbedInfo {
        endpoint: handle.tcp_addr.to_string(),
        entry_graph: bundle.manifest.entry_graph.clone(),
        protocol: EMBED_PROTOCOL.into(),
    };
    let mut text = serde_json::to_string_pretty(&embed).expect("embed serializes");
    text.push('\n');
    std::fs::write(dir.join(EMBED_FILE), text)?;
    Ok((handle, embed))
}

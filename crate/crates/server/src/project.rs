//! `project.json` and everything derived from it: the graph library, the
//! plugin registry and a configured gateway.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aad_core::engine::Runtime;
use aad_core::gateway::{load_profile, Gateway, GatewayMode, HttpProvider, MockProvider, Provider, RecordStore};
use aad_core::model::TopologyGraph;
use aad_core::plugin::PluginRegistry;
use aad_core::topo_format;
use serde::{Deserialize, Serialize};

pub const PROJECT_FILE: &str = "project.json";
pub const DEFAULT_DEBUG_PORT: u16 = 7411;

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Graph {
        path: PathBuf,
        source: topo_format::FormatError,
    },
    #[error("entry graph `{0}` not found in the project")]
    MissingGraph(String),
    #[error("graph name `{name}` is used by both {first} and {second}")]
    DuplicateGraph { name: String, first: PathBuf, second: PathBuf },
    #[error("plugin {path}: {message}")]
    Plugin { path: PathBuf, message: String },
    #[error("gateway: {0}")]
    Gateway(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ProjectError {
    pub fn code(&self) -> &'static str {
        match self {
            ProjectError::Config { .. } => "ConfigError",
            ProjectError::Graph { source, .. } => source.code(),
            ProjectError::MissingGraph(_) => "MissingGraph",
            ProjectError::DuplicateGraph { .. } => "DuplicateGraph",
            ProjectError::Plugin { .. } => "PluginError",
            ProjectError::Gateway(_) => "GatewayError",
            ProjectError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mimic_profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Mock,
            base_url: None,
            mimic_profile: None,
            records: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugConfig {
    pub port: u16,
}

impl Default for DebugConfig {
    fn default() -> Self {
        DebugConfig { port: DEFAULT_DEBUG_PORT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub name: String,
    pub entry_graph: String,
    #[serde(default)]
    pub plugin_paths: Vec<String>,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub debug: DebugConfig,
}

/// A loaded project. Graphs are every `*.topo.json` in the project root
/// and in `graphs/`, keyed by graph name.
#[derive(Debug, Clone)]
pub struct Project {
    pub dir: PathBuf,
    pub config: ProjectConfig,
    pub graphs: BTreeMap<String, (PathBuf, TopologyGraph)>,
}

/// Knobs applied on top of the project's gateway settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuntimeOverrides {
    pub seed: Option<u64>,
    pub mode: Option<GatewayMode>,
}

fn graph_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("graphs")] {
        if !sub.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(&sub)? {
            let path = entry?.path();
            if path.is_file() && path.to_string_lossy().ends_with(topo_format::EXTENSION) {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_graph(path: &Path) -> Result<TopologyGraph, ProjectError> {
    let text = std::fs::read_to_string(path)?;
    topo_format::deserialize(&text).map_err(|source| ProjectError::Graph {
        path: path.to_path_buf(),
        source,
    })
}

impl Project {
    /// Walks up from `start` to the nearest directory holding `project.json`.
    pub fn find(start: &Path) -> Option<PathBuf> {
        let start = if start.is_file() { start.parent()? } else { start };
        let start = std::fs::canonicalize(start).ok()?;
        start.ancestors().find(|d| d.join(PROJECT_FILE).is_file()).map(Path::to_path_buf)
    }

    pub fn load(dir: &Path) -> Result<Project, ProjectError> {
        let path = dir.join(PROJECT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| ProjectError::Config {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let config: ProjectConfig = serde_json::from_str(&text).map_err(|e| ProjectError::Config {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut graphs: BTreeMap<String, (PathBuf, TopologyGraph)> = BTreeMap::new();
        for file in graph_files(dir)? {
            let graph = read_graph(&file)?;
            let name = graph.name().to_string();
            if let Some((first, _)) = graphs.get(&name) {
                return Err(ProjectError::DuplicateGraph {
                    name,
                    first: first.clone(),
                    second: file,
                });
            }
            graphs.insert(name, (file, graph));
        }
        if !graphs.contains_key(&config.entry_graph) {
            return Err(ProjectError::MissingGraph(config.entry_graph.clone()));
        }
        Ok(Project {
            dir: dir.to_path_buf(),
            config,
            graphs,
        })
    }

    pub fn entry(&self) -> &TopologyGraph {
        &self.graphs[&self.config.entry_graph].1
    }

    pub fn graph(&self, name: &str) -> Option<&TopologyGraph> {
        self.graphs.get(name).map(|(_, g)| g)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.dir.join(relative)
    }

    pub fn plugin_dirs(&self) -> Vec<PathBuf> {
        self.config.plugin_paths.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn plugins(&self) -> Result<PluginRegistry, ProjectError> {
        load_plugins(&self.plugin_dirs())
    }

    pub fn runtime(&self, overrides: RuntimeOverrides) -> Result<Runtime, ProjectError> {
        let gateway = build_gateway(
            &self.config.gateway,
            self.config.gateway.records.as_ref().map(|r| self.resolve(r)),
            self.config.gateway.mimic_profile.as_ref().map(|p| self.resolve(p)),
            overrides,
        )?;
        let mut runtime = Runtime::new(Arc::new(gateway)).with_plugins(self.plugins()?);
        for (_, graph) in self.graphs.values() {
            runtime = runtime.with_graph(graph.clone());
        }
        runtime.work_dir = Some(self.dir.clone());
        Ok(runtime)
    }
}

pub fn load_plugins(dirs: &[PathBuf]) -> Result<PluginRegistry, ProjectError> {
    let mut registry = PluginRegistry::new();
    for dir in dirs {
        registry.load_plugin(dir).map_err(|e| ProjectError::Plugin {
            path: dir.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(registry)
}

/// Gateway from config. Without a base URL the mock provider answers
/// provider calls. Record and mimic-first modes append to the records
/// file; other modes only read it.
pub fn build_gateway(
    config: &GatewayConfig,
    records: Option<PathBuf>,
    profile: Option<PathBuf>,
    overrides: RuntimeOverrides,
) -> Result<Gateway, ProjectError> {
    let mode = overrides.mode.unwrap_or(config.mode);
    let seed = overrides.seed.unwrap_or(0);
    let provider: Arc<dyn Provider> = match (&config.base_url, mode) {
        (Some(url), m) if m != GatewayMode::Mock => Arc::new(HttpProvider::from_env(url.clone())),
        _ => Arc::new(MockProvider::new(seed)),
    };
    let mut gateway = Gateway::new(provider, mode);
    if let Some(path) = records {
        let store = if matches!(mode, GatewayMode::Record | GatewayMode::MimicFirst) {
            RecordStore::open(&path)
        } else if path.exists() {
            RecordStore::load(&path)
        } else {
            Ok(RecordStore::in_memory())
        };
        gateway = gateway.with_store(store.map_err(|e| ProjectError::Gateway(e.to_string()))?);
    }
    if let Some(path) = profile {
        let rules = load_profile(&path).map_err(|e| ProjectError::Gateway(e.to_string()))?;
        gateway = gateway.with_rules(rules);
    }
    Ok(gateway)
}

//! Plugin packages that contribute component kinds, and the registry that
//! loads them and dispatches invocations.

pub mod simweb;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::external::{run_json, DEFAULT_TIMEOUT_MS};
use crate::model::ComponentCatalog;
use crate::value::{Object, Value};

pub const MANIFEST_FILE: &str = "plugin.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    #[serde(default)]
    pub in_schema: Value,
    #[serde(default)]
    pub out_schema: Value,
    #[serde(default)]
    pub config_keys: Vec<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntrySpec {
    Builtin {
        builtin: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixture: Option<String>,
    },
    Command {
        command: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginManifest {
    pub namespace: String,
    pub version: String,
    pub components: Vec<ComponentSpec>,
    pub entry: EntrySpec,
}

impl PluginManifest {
    pub fn read(path: &Path) -> Result<PluginManifest, PluginError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PluginError::ManifestError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PluginError::ManifestError(format!("{}: {e}", path.display())))
    }

    fn check(&self) -> Result<semver::Version, PluginError> {
        let ns_ok = {
            let mut chars = self.namespace.chars();
            matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
                && chars.all(|c| c == '_' || c.is_ascii_lowercase() || c.is_ascii_digit())
        };
        if !ns_ok {
            return Err(PluginError::ManifestError(format!(
                "namespace `{}` must match [a-z][a-z0-9_]*",
                self.namespace
            )));
        }
        let version = semver::Version::parse(&self.version).map_err(|e| {
            PluginError::ManifestError(format!("version `{}`: {e}", self.version))
        })?;
        let mut names = std::collections::BTreeSet::new();
        for c in &self.components {
            if c.name.is_empty() || !c.name.chars().all(|ch| ch == '_' || ch.is_ascii_alphanumeric()) {
                return Err(PluginError::ManifestError(format!("bad component name `{}`", c.name)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(PluginError::NamespaceConflict {
                    namespace: self.namespace.clone(),
                    component: c.name.clone(),
                });
            }
        }
        Ok(version)
    }
}

/// What a handler sees besides config and input. `scratch` is this
/// session's private state for the plugin namespace.
pub struct InvokeContext<'a> {
    pub session: &'a str,
    pub node: &'a str,
    pub scratch: &'a mut Value,
}

pub trait ComponentHandler: Send + Sync {
    fn invoke(
        &self,
        component: &str,
        config: &Object,
        input: &Value,
        ctx: &mut InvokeContext<'_>,
    ) -> Result<Value, String>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PluginError {
    #[error("manifest: {0}")]
    ManifestError(String),
    #[error("component `{namespace}/{component}` is already registered differently")]
    NamespaceConflict { namespace: String, component: String },
    #[error("`{namespace}` {loaded} is loaded; refusing {offered}")]
    DowngradeRefused {
        namespace: String,
        loaded: String,
        offered: String,
    },
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("{message}")]
    HandlerError { message: String },
}

impl PluginError {
    pub fn code(&self) -> &'static str {
        match self {
            PluginError::ManifestError(_) => "ManifestError",
            PluginError::NamespaceConflict { .. } => "NamespaceConflict",
            PluginError::DowngradeRefused { .. } => "DowngradeRefused",
            PluginError::UnknownComponent(_) => "UnknownComponent",
            PluginError::HandlerError { .. } => "HandlerError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentInfo {
    pub namespace: String,
    pub name: String,
    pub version: String,
    pub description: String,
}

#[derive(Clone)]
struct LoadedPlugin {
    manifest: PluginManifest,
    version: semver::Version,
    dir: PathBuf,
    handler: Arc<dyn ComponentHandler>,
}

impl fmt::Debug for LoadedPlugin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoadedPlugin")
            .field("namespace", &self.manifest.namespace)
            .field("version", &self.manifest.version)
            .field("dir", &self.dir)
            .finish()
    }
}

struct CommandHandler {
    command: String,
    dir: PathBuf,
    timeout_ms: u64,
}

impl ComponentHandler for CommandHandler {
    fn invoke(
        &self,
        component: &str,
        config: &Object,
        input: &Value,
        ctx: &mut InvokeContext<'_>,
    ) -> Result<Value, String> {
        let env = Value::object([
            ("component", Value::from(component)),
            ("config", Value::Object(config.clone())),
            ("session", Value::from(ctx.session)),
            ("node", Value::from(ctx.node)),
        ]);
        let stdin = Value::object([("env", env), ("payload", input.clone())]);
        run_json(&self.command, Some(&self.dir), &stdin, self.timeout_ms).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PluginRegistry {
    plugins: BTreeMap<String, LoadedPlugin>,
}

impl PluginRegistry {
    pub fn new() -> PluginRegistry {
        PluginRegistry::default()
    }

    /// Loads `plugin.json` at `path` (or inside `path` when it is a
    /// directory). All components register, or none do.
    pub fn load_plugin(&mut self, path: &Path) -> Result<Vec<(String, String)>, PluginError> {
        let manifest_path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let manifest = PluginManifest::read(&manifest_path)?;
        let dir = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        self.load_manifest(manifest, &dir)
    }

    pub fn load_manifest(
        &mut self,
        manifest: PluginManifest,
        dir: &Path,
    ) -> Result<Vec<(String, String)>, PluginError> {
        let version = manifest.check()?;
        if let Some(existing) = self.plugins.get(&manifest.namespace) {
            if version < existing.version {
                return Err(PluginError::DowngradeRefused {
                    namespace: manifest.namespace.clone(),
                    loaded: existing.manifest.version.clone(),
                    offered: manifest.version.clone(),
                });
            }
            if version == existing.version {
                if existing.manifest == manifest {
                    return Ok(names(&manifest));
                }
                return Err(PluginError::NamespaceConflict {
                    namespace: manifest.namespace.clone(),
                    component: "*".into(),
                });
            }
        }
        let handler: Arc<dyn ComponentHandler> = match &manifest.entry {
            EntrySpec::Builtin { builtin, fixture } => match builtin.as_str() {
                "simweb" => {
                    let site = match fixture {
                        Some(file) => simweb::Site::load(&dir.join(file))
                            .map_err(PluginError::ManifestError)?,
                        None => simweb::Site::default(),
                    };
                    Arc::new(simweb::SimWeb::new(site))
                }
                other => {
                    return Err(PluginError::ManifestError(format!("unknown builtin handler `{other}`")))
                }
            },
            EntrySpec::Command { command, timeout_ms } => Arc::new(CommandHandler {
                command: command.clone(),
                dir: dir.to_path_buf(),
                timeout_ms: timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS),
            }),
        };
        let registered = names(&manifest);
        self.plugins.insert(
            manifest.namespace.clone(),
            LoadedPlugin {
                manifest,
                version,
                dir: dir.to_path_buf(),
                handler,
            },
        );
        Ok(registered)
    }

    /// Catalog sorted by `(namespace, name)`.
    pub fn list_components(&self) -> Vec<ComponentInfo> {
        let mut out: Vec<ComponentInfo> = self
            .plugins
            .values()
            .flat_map(|p| {
                p.manifest.components.iter().map(|c| ComponentInfo {
                    namespace: p.manifest.namespace.clone(),
                    name: c.name.clone(),
                    version: p.manifest.version.clone(),
                    description: c.description.clone(),
                })
            })
            .collect();
        out.sort();
        out
    }

    pub fn namespaces(&self) -> Vec<String> {
        self.plugins.keys().cloned().collect()
    }

    pub fn manifest(&self, namespace: &str) -> Option<&PluginManifest> {
        self.plugins.get(namespace).map(|p| &p.manifest)
    }

    pub fn plugin_dir(&self, namespace: &str) -> Option<&Path> {
        self.plugins.get(namespace).map(|p| p.dir.as_path())
    }

    pub fn invoke_component(
        &self,
        namespace: &str,
        name: &str,
        config: &Object,
        input: &Value,
        ctx: &mut InvokeContext<'_>,
    ) -> Result<Value, PluginError> {
        let plugin = self
            .plugins
            .get(namespace)
            .filter(|p| p.manifest.components.iter().any(|c| c.name == name))
            .ok_or_else(|| PluginError::UnknownComponent(format!("{namespace}/{name}")))?;
        plugin
            .handler
            .invoke(name, config, input, ctx)
            .map_err(|message| PluginError::HandlerError { message })
    }
}

impl ComponentCatalog for PluginRegistry {
    fn has_component(&self, namespace: &str, name: &str) -> bool {
        self.plugins
            .get(namespace)
            .is_some_and(|p| p.manifest.components.iter().any(|c| c.name == name))
    }
}

fn names(manifest: &PluginManifest) -> Vec<(String, String)> {
    manifest
        .components
        .iter()
        .map(|c| (manifest.namespace.clone(), c.name.clone()))
        .collect()
}

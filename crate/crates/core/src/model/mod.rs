//! The typed topology graph: nodes of chain, flow-control, interaction and
//! plugin kinds, wired port to port.
//!
//! Graph values keep nodes sorted by id and edges sorted by
//! `(from.node, from.port, to.node, to.port)`, so structural equality does
//! not depend on insertion order. Editing never mutates in place; see
//! [`TopologyGraph::apply_edit`].

mod config;
mod edit;
mod kind;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::{check_config, check_config_value, is_identifier};
pub use edit::GraphEdit;
pub use kind::{NodeKind, UnknownKind};
pub use validate::{
    try_region, validate, validate_with, ComponentCatalog, IssueCode, ValidationIssue,
    ValidationReport,
};

use crate::value::{Object, Value};

pub const SCHEMA_VERSION: u32 = 1;

pub const LOOPBACK_PORT: &str = "loopback";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no port `{port}`")]
    UnknownPort { node: String, port: String },
    #[error("node `{0}` already exists")]
    DuplicateNode(String),
    #[error("port {0} is already wired")]
    DuplicateEdge(PortRef),
    #[error("no edge {0}")]
    UnknownEdge(Edge),
}

/// Canvas coordinates; carry no execution semantics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    #[serde(with = "canonical_f64")]
    pub x: f64,
    #[serde(with = "canonical_f64")]
    pub y: f64,
}

mod canonical_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::value::Value;

    pub fn serialize<S: Serializer>(n: &f64, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&Value::Number(*n), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) => Ok(n),
            other => Err(serde::de::Error::custom(format!(
                "expected a number, found {}",
                other.type_name()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub node: String,
    pub port: String,
}

impl PortRef {
    pub fn new(node: impl Into<String>, port: impl Into<String>) -> PortRef {
        PortRef {
            node: node.into(),
            port: port.into(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: PortRef,
    pub to: PortRef,
}

impl Edge {
    pub fn new(from: (&str, &str), to: (&str, &str)) -> Edge {
        Edge {
            from: PortRef::new(from.0, from.1),
            to: PortRef::new(to.0, to.1),
        }
    }

    pub fn touches(&self, node: &str) -> bool {
        self.from.node == node || self.to.node == node
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub config: Object,
    pub in_ports: Vec<String>,
    pub out_ports: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
}

impl Node {
    /// A node with empty config and the default ports for its kind.
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Node {
        let mut node = Node {
            id: id.into(),
            kind,
            config: Object::new(),
            in_ports: Vec::new(),
            out_ports: Vec::new(),
            layout: None,
        };
        node.refresh_ports();
        node
    }

    pub fn with_config(mut self, key: &str, value: impl Into<Value>) -> Node {
        self.config.insert(key.to_string(), value.into());
        self.refresh_ports();
        self
    }

    pub fn at(mut self, x: f64, y: f64) -> Node {
        self.layout = Some(Layout { x, y });
        self
    }

    /// Recomputes ports from kind and config (Branch cases and Connector
    /// outputs declare extra ports).
    pub fn refresh_ports(&mut self) {
        let (ins, outs) = default_ports(&self.kind, &self.config);
        self.in_ports = ins;
        self.out_ports = outs;
    }

    pub fn has_in_port(&self, port: &str) -> bool {
        self.in_ports.iter().any(|p| p == port)
    }

    pub fn has_out_port(&self, port: &str) -> bool {
        self.out_ports.iter().any(|p| p == port)
    }

    pub fn config_str(&self, key: &str) -> Option<&str> {
        self.config.get(key).and_then(Value::as_str)
    }
}

/// Ports every node of `kind` gets for the given config.
pub fn default_ports(kind: &NodeKind, config: &Object) -> (Vec<String>, Vec<String>) {
    let owned = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let ins = match kind {
        NodeKind::Start => Vec::new(),
        NodeKind::ArrayLoop => owned(&["in", LOOPBACK_PORT]),
        _ => owned(&["in"]),
    };
    let outs = match kind {
        NodeKind::End => Vec::new(),
        NodeKind::ArrayLoop => owned(&["body", "done"]),
        NodeKind::ErrorHandler => owned(&["try", "catch"]),
        NodeKind::Branch => {
            let mut outs = owned(&["then", "else"]);
            if let Some(Value::Array(cases)) = config.get("cases") {
                for case in cases {
                    if let Some(port) = case.get("port").and_then(Value::as_str) {
                        if !outs.iter().any(|p| p == port) {
                            outs.push(port.to_string());
                        }
                    }
                }
            }
            outs
        }
        NodeKind::Connector => match config.get("outputs") {
            Some(Value::Array(names)) if !names.is_empty() => names
                .iter()
                .map(|n| n.as_str().map(str::to_string).unwrap_or_default())
                .collect(),
            _ => owned(&["out"]),
        },
        _ => owned(&["out"]),
    };
    (ins, outs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyGraph {
    pub(crate) schema_version: u32,
    pub(crate) name: String,
    pub(crate) entry: String,
    pub(crate) nodes: Vec<Node>,
    pub(crate) edges: Vec<Edge>,
}

impl TopologyGraph {
    pub fn new(name: impl Into<String>) -> TopologyGraph {
        TopologyGraph {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            entry: String::new(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Builds a graph from parts, keeping duplicates (validation reports
    /// them). The entry is the first Start node unless given.
    pub fn from_parts(
        name: impl Into<String>,
        entry: Option<String>,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
    ) -> TopologyGraph {
        let mut g = TopologyGraph {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            entry: entry.unwrap_or_default(),
            nodes,
            edges,
        };
        g.normalize();
        g
    }

    pub(crate) fn normalize(&mut self) {
        self.nodes.sort_by(|a, b| a.id.cmp(&b.id));
        self.edges.sort();
        if self.entry.is_empty() {
            if let Some(start) = self.nodes.iter().find(|n| n.kind == NodeKind::Start) {
                self.entry = start.id.clone();
            }
        }
    }

    pub fn with_node(mut self, node: Node) -> TopologyGraph {
        self.nodes.push(node);
        self.normalize();
        self
    }

    pub fn with_edge(mut self, from: (&str, &str), to: (&str, &str)) -> TopologyGraph {
        self.edges.push(Edge::new(from, to));
        self.normalize();
        self
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub(crate) fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .ok()
            .map(move |i| &mut self.nodes[i])
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.node(id).is_some()
    }

    /// Edges whose source or target is `id`.
    pub fn incident_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.touches(id))
    }

    pub fn edge_from(&self, from: &PortRef) -> Option<&Edge> {
        self.edges.iter().find(|e| &e.from == from)
    }

    /// Target of the edge leaving `node.port`, or `None` when unwired.
    pub fn next_hop(&self, node: &str, port: &str) -> Result<Option<PortRef>, ModelError> {
        let n = self
            .node(node)
            .ok_or_else(|| ModelError::UnknownNode(node.to_string()))?;
        if !n.has_out_port(port) {
            return Err(ModelError::UnknownPort {
                node: node.to_string(),
                port: port.to_string(),
            });
        }
        Ok(self
            .edge_from(&PortRef::new(node, port))
            .map(|e| e.to.clone()))
    }

    /// Kinds of all nodes, keyed by id; handy for summaries and tests.
    pub fn kind_map(&self) -> BTreeMap<&str, &NodeKind> {
        self.nodes.iter().map(|n| (n.id.as_str(), &n.kind)).collect()
    }
}

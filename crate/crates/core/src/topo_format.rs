//! Canonical `.topo.json` form of a topology graph.
//!
//! Keys come out in the order `schema_version, name, entry, nodes, edges`;
//! node keys as `id, kind, config, in_ports, out_ports, layout`; config
//! keys sorted. Two-space indentation, LF endings, trailing newline.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{validate, Edge, Node, TopologyGraph, ValidationReport, SCHEMA_VERSION};

pub const EXTENSION: &str = ".topo.json";

const TOP_LEVEL_KEYS: [&str; 5] = ["schema_version", "name", "entry", "nodes", "edges"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("invalid graph: {}", .0.summary())]
    InvalidGraph(ValidationReport),
    #[error("syntax error at {line}:{col}: {message}")]
    SyntaxError {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    SchemaError(String),
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::InvalidGraph(_) => "InvalidGraph",
            FormatError::SyntaxError { .. } => "SyntaxError",
            FormatError::SchemaError(_) => "SchemaError",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    schema_version: u32,
    name: String,
    entry: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

/// Canonical text for a valid graph.
pub fn serialize(graph: &TopologyGraph) -> Result<String, FormatError> {
    let report = validate(graph);
    if !report.ok {
        return Err(FormatError::InvalidGraph(report));
    }
    Ok(serialize_unchecked(graph))
}

/// Canonical text without the validity gate; used for diagnostics and
/// for storing sync ancestors that may be mid-edit.
pub fn serialize_unchecked(graph: &TopologyGraph) -> String {
    let doc = Document {
        schema_version: graph.schema_version(),
        name: graph.name().to_string(),
        entry: graph.entry().to_string(),
        nodes: graph.nodes().to_vec(),
        edges: graph.edges().to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("document serializes");
    text.push('\n');
    text
}

pub fn deserialize(text: &str) -> Result<TopologyGraph, FormatError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| FormatError::SyntaxError {
        line: e.line(),
        col: e.column(),
        message: e.to_string(),
    })?;
    let object = raw
        .as_object()
        .ok_or_else(|| FormatError::SchemaError("top level must be an object".into()))?;
    for key in object.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            return Err(FormatError::SchemaError(format!("unknown key `{key}`")));
        }
    }
    match object.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(FormatError::SchemaError(format!(
                "unsupported schema_version {v}"
            )))
        }
        None => {
            return Err(FormatError::SchemaError(
                "missing or non-integer schema_version".into(),
            ))
        }
    }
    let doc: Document =
        serde_json::from_value(raw).map_err(|e| FormatError::SchemaError(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for node in &doc.nodes {
        if !seen.insert(node.id.as_str()) {
            return Err(FormatError::SchemaError(format!("duplicate node id `{}`", node.id)));
        }
    }
    Ok(TopologyGraph::from_parts(
        doc.name,
        Some(doc.entry),
        doc.nodes,
        doc.edges,
    ))
}

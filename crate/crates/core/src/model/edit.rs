use serde::{Deserialize, Serialize};

use super::{Edge, Layout, ModelError, Node, NodeKind, TopologyGraph};
use crate::value::Value;

/// The edit vocabulary shared by the canvas and code sync.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum GraphEdit {
    AddNode { node: Node },
    RemoveNode { id: String },
    Connect { edge: Edge },
    Disconnect { edge: Edge },
    SetConfig { id: String, key: String, value: Value },
    UnsetConfig { id: String, key: String },
    MoveNode { id: String, x: f64, y: f64 },
}

impl GraphEdit {
    /// Node the edit is about, if any.
    pub fn node_id(&self) -> Option<&str> {
        match self {
            GraphEdit::AddNode { node } => Some(&node.id),
            GraphEdit::RemoveNode { id }
            | GraphEdit::SetConfig { id, .. }
            | GraphEdit::UnsetConfig { id, .. }
            | GraphEdit::MoveNode { id, .. } => Some(id),
            GraphEdit::Connect { .. } | GraphEdit::Disconnect { .. } => None,
        }
    }
}

impl TopologyGraph {
    /// Returns a new graph with `edit` applied. The result may be invalid;
    /// validation is a separate step.
    pub fn apply_edit(&self, edit: &GraphEdit) -> Result<TopologyGraph, ModelError> {
        let mut g = self.clone();
        match edit {
            GraphEdit::AddNode { node } => {
                if g.contains_node(&node.id) {
                    return Err(ModelError::DuplicateNode(node.id.clone()));
                }
                g.nodes.push(node.clone());
                if node.kind == NodeKind::Start && g.entry.is_empty() {
                    g.entry = node.id.clone();
                }
            }
            GraphEdit::RemoveNode { id } => {
                if !g.contains_node(id) {
                    return Err(ModelError::UnknownNode(id.clone()));
                }
                g.nodes.retain(|n| &n.id != id);
                g.edges.retain(|e| !e.touches(id));
                if &g.entry == id {
                    g.entry.clear();
                }
            }
            GraphEdit::Connect { edge } => {
                for end in [&edge.from.node, &edge.to.node] {
                    if !g.contains_node(end) {
                        return Err(ModelError::UnknownNode(end.clone()));
                    }
                }
                if g.edge_from(&edge.from).is_some() {
                    return Err(ModelError::DuplicateEdge(edge.from.clone()));
                }
                g.edges.push(edge.clone());
            }
            GraphEdit::Disconnect { edge } => {
                let before = g.edges.len();
                g.edges.retain(|e| e != edge);
                if g.edges.len() == before {
                    return Err(ModelError::UnknownEdge(edge.clone()));
                }
            }
            GraphEdit::SetConfig { id, key, value } => {
                let node = g
                    .node_mut(id)
                    .ok_or_else(|| ModelError::UnknownNode(id.clone()))?;
                node.config.insert(key.clone(), value.clone());
                node.refresh_ports();
            }
            GraphEdit::UnsetConfig { id, key } => {
                let node = g
                    .node_mut(id)
                    .ok_or_else(|| ModelError::UnknownNode(id.clone()))?;
                node.config.remove(key);
                node.refresh_ports();
            }
            GraphEdit::MoveNode { id, x, y } => {
                let node = g
                    .node_mut(id)
                    .ok_or_else(|| ModelError::UnknownNode(id.clone()))?;
                node.layout = Some(Layout { x: *x, y: *y });
            }
        }
        g.normalize();
        Ok(g)
    }

    /// Applies edits in order, stopping at the first failure.
    pub fn apply_edits<'a>(
        &self,
        edits: impl IntoIterator<Item = &'a GraphEdit>,
    ) -> Result<TopologyGraph, ModelError> {
        let mut g = self.clone();
        for e in edits {
            g = g.apply_edit(e)?;
        }
        Ok(g)
    }
}

impl From<Node> for GraphEdit {
    fn from(node: Node) -> Self {
        GraphEdit::AddNode { node }
    }
}

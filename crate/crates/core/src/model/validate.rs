//! Structural validation. Problems are reported, never raised.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::config::{check_config, is_identifier};
use super::{Edge, NodeKind, TopologyGraph, LOOPBACK_PORT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IssueCode {
    MissingEntry,
    MissingEnd,
    DuplicateId,
    InvalidNode,
    DanglingEdge,
    FanoutViolation,
    IllegalCycle,
    UnreachableNode,
    UnknownExtension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: IssueCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<Edge>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn codes(&self) -> Vec<IssueCode> {
        self.issues.iter().map(|i| i.code).collect()
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }

    /// One line per issue, for diagnostics.
    pub fn summary(&self) -> String {
        self.issues
            .iter()
            .map(|i| format!("{:?}: {}", i.code, i.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Answers whether a plugin component is currently registered.
pub trait ComponentCatalog {
    fn has_component(&self, namespace: &str, name: &str) -> bool;
}

/// Validates structure only; plugin kinds are not checked against a
/// registry. Use [`validate_with`] to include that check.
pub fn validate(graph: &TopologyGraph) -> ValidationReport {
    validate_with(graph, None)
}

pub fn validate_with(
    graph: &TopologyGraph,
    catalog: Option<&dyn ComponentCatalog>,
) -> ValidationReport {
    let mut v = Validator {
        graph,
        issues: Vec::new(),
    };
    v.run(catalog);
    ValidationReport {
        ok: v.issues.is_empty(),
        issues: v.issues,
    }
}

struct Validator<'a> {
    graph: &'a TopologyGraph,
    issues: Vec<ValidationIssue>,
}

impl Validator<'_> {
    fn node_issue(&mut self, code: IssueCode, node: &str, message: String) {
        self.issues.push(ValidationIssue {
            code,
            node: Some(node.to_string()),
            edge: None,
            message,
        });
    }

    fn edge_issue(&mut self, code: IssueCode, edge: &Edge, message: String) {
        self.issues.push(ValidationIssue {
            code,
            node: None,
            edge: Some(edge.clone()),
            message,
        });
    }

    fn run(&mut self, catalog: Option<&dyn ComponentCatalog>) {
        let g = self.graph;
        if g.nodes.is_empty() {
            self.issues.push(ValidationIssue {
                code: IssueCode::MissingEntry,
                node: None,
                edge: None,
                message: "graph has no nodes".into(),
            });
            return;
        }
        self.check_nodes(catalog);
        self.check_entry();
        let wired = self.check_edges();
        self.check_cycles(&wired);
        self.check_reachability(&wired);
    }

    fn check_nodes(&mut self, catalog: Option<&dyn ComponentCatalog>) {
        let g = self.graph;
        let mut seen = BTreeSet::new();
        for node in &g.nodes {
            if !seen.insert(node.id.as_str()) {
                self.node_issue(
                    IssueCode::DuplicateId,
                    &node.id,
                    format!("node id `{}` is used more than once", node.id),
                );
            }
            if !is_identifier(&node.id) {
                self.node_issue(
                    IssueCode::InvalidNode,
                    &node.id,
                    format!("node id `{}` is not an identifier", node.id),
                );
            }
            for (label, ports) in [("in", &node.in_ports), ("out", &node.out_ports)] {
                let unique: BTreeSet<_> = ports.iter().collect();
                if unique.len() != ports.len() {
                    self.node_issue(
                        IssueCode::InvalidNode,
                        &node.id,
                        format!("node `{}` repeats an {label}-port name", node.id),
                    );
                }
            }
            let (ins, outs) = super::default_ports(&node.kind, &node.config);
            if ins != node.in_ports || outs != node.out_ports {
                self.node_issue(
                    IssueCode::InvalidNode,
                    &node.id,
                    format!(
                        "node `{}` ports {:?}/{:?} do not match its kind ({:?}/{:?})",
                        node.id, node.in_ports, node.out_ports, ins, outs
                    ),
                );
            }
            for problem in check_config(&node.kind, &node.config) {
                self.node_issue(
                    IssueCode::InvalidNode,
                    &node.id,
                    format!("node `{}`: {problem}", node.id),
                );
            }
            if let Some(cat) = catalog {
                let component = match &node.kind {
                    NodeKind::Extension { namespace, name } => Some((namespace.clone(), name.clone())),
                    NodeKind::Tool => node
                        .config_str("component")
                        .and_then(|c| c.split_once('/'))
                        .map(|(a, b)| (a.to_string(), b.to_string())),
                    _ => None,
                };
                if let Some((ns, name)) = component {
                    if !cat.has_component(&ns, &name) {
                        self.node_issue(
                            IssueCode::UnknownExtension,
                            &node.id,
                            format!("component `{ns}/{name}` is not registered"),
                        );
                    }
                }
            }
        }
    }

    fn check_entry(&mut self) {
        let g = self.graph;
        let starts: Vec<&str> = g
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Start)
            .map(|n| n.id.as_str())
            .collect();
        match starts.as_slice() {
            [] => self.issues.push(ValidationIssue {
                code: IssueCode::MissingEntry,
                node: None,
                edge: None,
                message: "graph has no Start node".into(),
            }),
            [only] => {
                if g.entry != *only {
                    self.node_issue(
                        IssueCode::MissingEntry,
                        only,
                        format!("entry `{}` does not name the Start node `{only}`", g.entry),
                    );
                }
            }
            many => {
                for extra in &many[1..] {
                    self.node_issue(
                        IssueCode::MissingEntry,
                        extra,
                        format!("more than one Start node (`{extra}`)"),
                    );
                }
            }
        }
        if !g.nodes.iter().any(|n| n.kind == NodeKind::End) {
            self.issues.push(ValidationIssue {
                code: IssueCode::MissingEnd,
                node: None,
                edge: None,
                message: "graph has no End node".into(),
            });
        }
    }

    /// Returns the edges whose endpoints exist.
    fn check_edges(&mut self) -> Vec<Edge> {
        let g = self.graph;
        let mut wired = Vec::new();
        let mut by_out: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        let mut by_in: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for edge in &g.edges {
            let from_ok = g.node(&edge.from.node).is_some_and(|n| n.has_out_port(&edge.from.port));
            let to_ok = g.node(&edge.to.node).is_some_and(|n| n.has_in_port(&edge.to.port));
            if !(from_ok && to_ok) {
                self.edge_issue(
                    IssueCode::DanglingEdge,
                    edge,
                    format!("edge {edge} references a missing node or port"),
                );
                continue;
            }
            *by_out.entry((&edge.from.node, &edge.from.port)).or_default() += 1;
            *by_in.entry((&edge.to.node, &edge.to.port)).or_default() += 1;
            wired.push(edge.clone());
        }
        for ((node, port), count) in by_out {
            if count > 1 {
                self.node_issue(
                    IssueCode::FanoutViolation,
                    node,
                    format!("out-port {node}.{port} has {count} edges"),
                );
            }
        }
        for ((node, port), count) in by_in {
            let is_summary = g.node(node).is_some_and(|n| n.kind == NodeKind::Summary);
            if count > 1 && !is_summary {
                self.node_issue(
                    IssueCode::FanoutViolation,
                    node,
                    format!("in-port {node}.{port} has {count} edges but only Summary joins"),
                );
            }
        }
        wired
    }

    fn check_cycles(&mut self, wired: &[Edge]) {
        let forward: Vec<&Edge> = wired.iter().filter(|e| e.to.port != LOOPBACK_PORT).collect();
        let adjacency = adjacency(forward.iter().copied());
        // Iterative DFS; an edge into a node still on the stack closes a cycle.
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        for root in self.graph.nodes.iter().map(|n| n.id.as_str()) {
            if state.contains_key(root) {
                continue;
            }
            let mut stack: Vec<(&str, usize)> = vec![(root, 0)];
            state.insert(root, 1);
            while let Some((node, idx)) = stack.pop() {
                let succ = adjacency.get(node).map(Vec::as_slice).unwrap_or(&[]);
                if let Some(edge) = succ.get(idx) {
                    stack.push((node, idx + 1));
                    let next = edge.to.node.as_str();
                    match state.get(next) {
                        None => {
                            state.insert(next, 1);
                            stack.push((next, 0));
                        }
                        Some(1) => self.edge_issue(
                            IssueCode::IllegalCycle,
                            edge,
                            format!("edge {edge} closes a cycle outside an ArrayLoop loopback"),
                        ),
                        _ => {}
                    }
                } else {
                    state.insert(node, 2);
                }
            }
        }
        for edge in wired.iter().filter(|e| e.to.port == LOOPBACK_PORT) {
            let loop_id = edge.to.node.as_str();
            let body_start = forward
                .iter()
                .find(|e| e.from.node == loop_id && e.from.port == "body")
                .map(|e| e.to.node.as_str());
            let in_body = body_start
                .map(|s| reach(&adjacency, [s]).contains(edge.from.node.as_str()))
                .unwrap_or(false);
            if !in_body {
                self.edge_issue(
                    IssueCode::IllegalCycle,
                    edge,
                    format!("loopback edge {edge} does not start inside the body of `{loop_id}`"),
                );
            }
        }
    }

    fn check_reachability(&mut self, wired: &[Edge]) {
        let g = self.graph;
        let adjacency = adjacency(wired.iter());
        let mut reverse: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in wired {
            reverse.entry(&e.to.node).or_default().push(&e.from.node);
        }
        let from_start = if g.contains_node(&g.entry) {
            reach(&adjacency, [g.entry.as_str()])
        } else {
            BTreeSet::new()
        };
        let terminals = g.nodes.iter().filter(|n| match n.kind {
            NodeKind::End => true,
            NodeKind::ArrayLoop => !wired.iter().any(|e| e.from.node == n.id && e.from.port == "done"),
            _ => false,
        });
        let mut to_end: BTreeSet<&str> = BTreeSet::new();
        let mut queue: VecDeque<&str> = terminals.map(|n| n.id.as_str()).collect();
        while let Some(n) = queue.pop_front() {
            if to_end.insert(n) {
                for p in reverse.get(n).into_iter().flatten() {
                    queue.push_back(p);
                }
            }
        }
        let mut reported = BTreeSet::new();
        for node in &g.nodes {
            if node.kind == NodeKind::End || !reported.insert(node.id.as_str()) {
                continue;
            }
            let id = node.id.as_str();
            if !from_start.contains(id) {
                self.node_issue(
                    IssueCode::UnreachableNode,
                    id,
                    format!("node `{id}` is not reachable from the Start node"),
                );
            } else if !to_end.contains(id) {
                self.node_issue(
                    IssueCode::UnreachableNode,
                    id,
                    format!("node `{id}` has no path to an End node"),
                );
            }
        }
    }
}

fn adjacency<'a>(edges: impl Iterator<Item = &'a Edge>) -> BTreeMap<&'a str, Vec<&'a Edge>> {
    let mut map: BTreeMap<&str, Vec<&Edge>> = BTreeMap::new();
    for e in edges {
        map.entry(e.from.node.as_str()).or_default().push(e);
    }
    map
}

fn reach<'a>(
    adjacency: &BTreeMap<&'a str, Vec<&'a Edge>>,
    roots: impl IntoIterator<Item = &'a str>,
) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<&str> = roots.into_iter().collect();
    while let Some(n) = stack.pop() {
        if seen.insert(n) {
            for e in adjacency.get(n).into_iter().flatten() {
                stack.push(&e.to.node);
            }
        }
    }
    seen
}

/// Nodes guarded by the ErrorHandler `handler`: everything reachable from
/// its `try` port that is not also reachable from its `catch` port.
pub fn try_region(graph: &TopologyGraph, handler: &str) -> BTreeSet<String> {
    let adjacency = adjacency(graph.edges.iter());
    let target = |port: &str| {
        graph
            .edges
            .iter()
            .find(|e| e.from.node == handler && e.from.port == port)
            .map(|e| e.to.node.as_str())
    };
    let tried = target("try").map(|t| reach(&adjacency, [t])).unwrap_or_default();
    let caught = target("catch").map(|t| reach(&adjacency, [t])).unwrap_or_default();
    tried
        .difference(&caught)
        .filter(|n| **n != handler)
        .map(|n| n.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Node;
    use crate::value::Value;

    fn minimal() -> TopologyGraph {
        TopologyGraph::new("min")
            .with_node(Node::new("start", NodeKind::Start))
            .with_node(Node::new("c", NodeKind::Connector))
            .with_node(Node::new("end", NodeKind::End))
            .with_edge(("start", "out"), ("c", "in"))
            .with_edge(("c", "out"), ("end", "in"))
    }

    #[test]
    fn empty_graph_is_missing_entry_only() {
        let r = validate(&TopologyGraph::new("empty"));
        assert!(!r.ok);
        assert_eq!(r.codes(), vec![IssueCode::MissingEntry]);
    }

    #[test]
    fn minimal_graph_is_valid() {
        let r = validate(&minimal());
        assert!(r.ok, "{}", r.summary());
        assert!(r.issues.is_empty());
    }

    #[test]
    fn dangling_edge_is_reported() {
        let g = minimal().with_edge(("end", "out"), ("ghost", "in"));
        let r = validate(&g);
        assert!(!r.ok);
        let issue = r.issues.iter().find(|i| i.code == IssueCode::DanglingEdge).unwrap();
        assert_eq!(issue.edge, Some(Edge::new(("end", "out"), ("ghost", "in"))));
    }

    #[test]
    fn back_edge_is_illegal_cycle() {
        let g = TopologyGraph::new("cyc")
            .with_node(Node::new("start", NodeKind::Start))
            .with_node(Node::new("a", NodeKind::Summary))
            .with_node(Node::new("b", NodeKind::Connector).with_config(
                "outputs",
                Value::from(vec![Value::from("x"), Value::from("y")]),
            ))
            .with_node(Node::new("end", NodeKind::End))
            .with_edge(("start", "out"), ("a", "in"))
            .with_edge(("a", "out"), ("b", "in"))
            .with_edge(("b", "x"), ("a", "in"))
            .with_edge(("b", "y"), ("end", "in"));
        assert!(validate(&g).has(IssueCode::IllegalCycle));
    }

    #[test]
    fn loopback_cycle_is_allowed() {
        let g = TopologyGraph::new("loop")
            .with_node(Node::new("start", NodeKind::Start))
            .with_node(Node::new("lp", NodeKind::ArrayLoop))
            .with_node(Node::new("body", NodeKind::Code).with_config("expr", "item * 2"))
            .with_node(Node::new("end", NodeKind::End))
            .with_edge(("start", "out"), ("lp", "in"))
            .with_edge(("lp", "body"), ("body", "in"))
            .with_edge(("body", "out"), ("lp", "loopback"))
            .with_edge(("lp", "done"), ("end", "in"));
        let r = validate(&g);
        assert!(r.ok, "{}", r.summary());
    }

    #[test]
    fn loopback_from_outside_body_is_rejected() {
        let g = TopologyGraph::new("loop")
            .with_node(Node::new("start", NodeKind::Start))
            .with_node(Node::new("pre", NodeKind::Connector))
            .with_node(Node::new("lp", NodeKind::ArrayLoop))
            .with_node(Node::new("end", NodeKind::End))
            .with_edge(("start", "out"), ("pre", "in"))
            .with_edge(("pre", "out"), ("lp", "loopback"))
            .with_edge(("lp", "done"), ("end", "in"));
        assert!(validate(&g).has(IssueCode::IllegalCycle));
    }

    #[test]
    fn fanin_only_on_summary() {
        let base = |join: Node| {
            TopologyGraph::new("j")
                .with_node(Node::new("start", NodeKind::Start))
                .with_node(Node::new("fan", NodeKind::Connector).with_config(
                    "outputs",
                    Value::from(vec![Value::from("a"), Value::from("b")]),
                ))
                .with_node(join)
                .with_node(Node::new("end", NodeKind::End))
                .with_edge(("start", "out"), ("fan", "in"))
                .with_edge(("fan", "a"), ("j", "in"))
                .with_edge(("fan", "b"), ("j", "in"))
                .with_edge(("j", "out"), ("end", "in"))
        };
        assert!(validate(&base(Node::new("j", NodeKind::Summary))).ok);
        assert!(validate(&base(Node::new("j", NodeKind::Connector))).has(IssueCode::FanoutViolation));
    }

    #[test]
    fn unreachable_and_dead_end_nodes() {
        let g = minimal().with_node(Node::new("island", NodeKind::Connector));
        assert!(validate(&g).has(IssueCode::UnreachableNode));
        let g = TopologyGraph::new("dead")
            .with_node(Node::new("start", NodeKind::Start))
            .with_node(Node::new("br", NodeKind::Branch))
            .with_node(Node::new("stuck", NodeKind::Connector))
            .with_node(Node::new("end", NodeKind::End))
            .with_edge(("start", "out"), ("br", "in"))
            .with_edge(("br", "then"), ("end", "in"))
            .with_edge(("br", "else"), ("stuck", "in"));
        let r = validate(&g);
        assert_eq!(r.codes(), vec![IssueCode::UnreachableNode]);
    }

    #[test]
    fn missing_start_and_end() {
        let g = TopologyGraph::new("x").with_node(Node::new("c", NodeKind::Connector));
        let codes = validate(&g).codes();
        assert!(codes.contains(&IssueCode::MissingEntry));
        assert!(codes.contains(&IssueCode::MissingEnd));
    }

    #[test]
    fn duplicate_ids_are_reported() {
        let g = TopologyGraph::from_parts(
            "d",
            None,
            vec![
                Node::new("start", NodeKind::Start),
                Node::new("end", NodeKind::End),
                Node::new("end", NodeKind::End),
            ],
            vec![Edge::new(("start", "out"), ("end", "in"))],
        );
        assert!(validate(&g).has(IssueCode::DuplicateId));
    }

    #[test]
    fn unknown_extension_needs_catalog() {
        struct Only;
        impl ComponentCatalog for Only {
            fn has_component(&self, ns: &str, name: &str) -> bool {
                ns == "simweb" && name == "open_page"
            }
        }
        let g = |kind: NodeKind| {
            TopologyGraph::new("e")
                .with_node(Node::new("start", NodeKind::Start))
                .with_node(Node::new("x", kind))
                .with_node(Node::new("end", NodeKind::End))
                .with_edge(("start", "out"), ("x", "in"))
                .with_edge(("x", "out"), ("end", "in"))
        };
        let known = g(NodeKind::extension("simweb", "open_page"));
        let unknown = g(NodeKind::extension("simweb", "teleport"));
        assert!(validate_with(&known, Some(&Only)).ok);
        assert!(validate_with(&unknown, Some(&Only)).has(IssueCode::UnknownExtension));
        assert!(validate(&unknown).ok);
    }

    #[test]
    fn try_region_excludes_catch_continuation() {
        let g = TopologyGraph::new("eh")
            .with_node(Node::new("start", NodeKind::Start))
            .with_node(Node::new("h", NodeKind::ErrorHandler))
            .with_node(Node::new("risky", NodeKind::Code).with_config("expr", "1/0"))
            .with_node(Node::new("join", NodeKind::Summary))
            .with_node(Node::new("fix", NodeKind::Prompt).with_config("template", "err"))
            .with_node(Node::new("end", NodeKind::End))
            .with_edge(("start", "out"), ("h", "in"))
            .with_edge(("h", "try"), ("risky", "in"))
            .with_edge(("h", "catch"), ("fix", "in"))
            .with_edge(("risky", "out"), ("join", "in"))
            .with_edge(("fix", "out"), ("join", "in"))
            .with_edge(("join", "out"), ("end", "in"));
        let region = try_region(&g, "h");
        assert_eq!(region.into_iter().collect::<Vec<_>>(), vec!["risky".to_string()]);
    }
}

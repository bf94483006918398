//! Agent scripts: a line-oriented text form of a graph that people edit
//! next to their own notes, and the merge that keeps both sides aligned.
//!
//! ```text
//! #aad agent "hello" v1
//! #aad node start kind=Start at=(0,0)
//! #aad end
//! #aad node greet kind=Prompt
//!   template: "Hi {payload}"
//! #aad end
//! #aad wire start.out -> greet.in
//! ```
//!
//! Anything that is not a directive or inside a node block is margin text.
//! Margin text is kept byte for byte and re-emitted before the directive it
//! preceded.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{
    check_config_value, is_identifier, validate, Edge, GraphEdit, Node, NodeKind, PortRef, TopologyGraph,
    ValidationReport, LOOPBACK_PORT,
};
use crate::value::{format_number, Object, Value};

pub const EXTENSION: &str = ".agent.aad";
const DIRECTIVE: &str = "#aad";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyncError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("invalid graph: {}", .0.summary())]
    InvalidGraph(ValidationReport),
}

impl SyncError {
    pub fn code(&self) -> &'static str {
        match self {
            SyncError::ParseError { .. } => "ParseError",
            SyncError::SchemaError { .. } => "SchemaError",
            SyncError::InvalidGraph(_) => "InvalidGraph",
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> SyncError {
    SyncError::ParseError {
        line,
        message: message.into(),
    }
}

fn schema_err(line: usize, message: impl Into<String>) -> SyncError {
    SyncError::SchemaError {
        line,
        message: message.into(),
    }
}

/// What a stretch of margin text is attached to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Anchor {
    Header,
    Node(String),
    Wire(Edge),
    Tail,
}

impl Anchor {
    fn label(&self) -> String {
        match self {
            Anchor::Header => "header".into(),
            Anchor::Node(id) => format!("node {id}"),
            Anchor::Wire(e) => format!("wire {}.{} -> {}.{}", e.from.node, e.from.port, e.to.node, e.to.port),
            Anchor::Tail => "tail".into(),
        }
    }
}

/// A parsed script: the graph plus everything needed to re-emit the
/// user's margin text in place.
#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub graph: TopologyGraph,
    anchors: Vec<Anchor>,
    margins: BTreeMap<Anchor, String>,
    blocks: BTreeMap<Anchor, String>,
}

impl Script {
    /// Margin text in file order.
    pub fn margin_text(&self) -> Vec<&str> {
        self.anchors
            .iter()
            .filter_map(|a| self.margins.get(a).map(String::as_str))
            .collect()
    }
}

/// Emits the script for a valid graph.
pub fn generate(graph: &TopologyGraph) -> Result<String, SyncError> {
    let report = validate(graph);
    if !report.ok {
        return Err(SyncError::InvalidGraph(report));
    }
    Ok(render(graph, None))
}

/// Emits the script without validating first.
pub fn generate_unchecked(graph: &TopologyGraph) -> String {
    render(graph, None)
}

pub fn parse(text: &str) -> Result<TopologyGraph, SyncError> {
    parse_script(text).map(|s| s.graph)
}

/// Nodes in topological order over non-loopback edges, Start first, ties
/// broken by id. Nodes left over by a cycle follow in id order.
fn topo_order(graph: &TopologyGraph) -> Vec<&Node> {
    let mut indegree: BTreeMap<&str, usize> = graph.nodes().iter().map(|n| (n.id.as_str(), 0)).collect();
    let forward: Vec<&Edge> = graph
        .edges()
        .iter()
        .filter(|e| e.to.port != LOOPBACK_PORT && e.from.node != e.to.node)
        .collect();
    for e in &forward {
        if let Some(d) = indegree.get_mut(e.to.node.as_str()) {
            *d += 1;
        }
    }
    let rank = |id: &str| {
        let start = graph.node(id).is_some_and(|n| n.kind == NodeKind::Start);
        (!start, id.to_string())
    };
    let mut ready: BTreeSet<(bool, String)> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| rank(id))
        .collect();
    let mut order = Vec::new();
    let mut done = BTreeSet::new();
    while let Some(next) = ready.pop_first() {
        let id = next.1;
        for e in forward.iter().filter(|e| e.from.node == id) {
            let d = indegree.get_mut(e.to.node.as_str()).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert(rank(&e.to.node));
            }
        }
        done.insert(id.clone());
        order.push(graph.node(&id).expect("known node"));
    }
    for n in graph.nodes() {
        if !done.contains(&n.id) {
            order.push(n);
        }
    }
    order
}

fn is_plain_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn heredoc_tag(lines: &[&str]) -> String {
    let mut tag = "EOT".to_string();
    let mut n = 0;
    while lines.contains(&tag.as_str()) {
        n += 1;
        tag = format!("EOT{n}");
    }
    tag
}

fn render_block(node: &Node) -> String {
    let mut out = format!("{DIRECTIVE} node {} kind={}", node.id, node.kind);
    if let Some(layout) = &node.layout {
        out.push_str(&format!(" at=({},{})", format_number(layout.x), format_number(layout.y)));
    }
    out.push('\n');
    for (key, value) in &node.config {
        let key = if is_plain_key(key) {
            key.clone()
        } else {
            Value::from(key.as_str()).to_canonical_json()
        };
        match value {
            Value::String(s) if s.contains('\n') => {
                let lines: Vec<&str> = s.split('\n').collect();
                let tag = heredoc_tag(&lines);
                out.push_str(&format!("  {key}: <<{tag}\n"));
                for line in lines {
                    out.push_str(line);
                    out.push('\n');
                }
                out.push_str(&tag);
                out.push('\n');
            }
            other => out.push_str(&format!("  {key}: {}\n", other.to_canonical_json())),
        }
    }
    out.push_str(&format!("{DIRECTIVE} end\n"));
    out
}

fn render_wire(e: &Edge) -> String {
    format!(
        "{DIRECTIVE} wire {}.{} -> {}.{}\n",
        e.from.node, e.from.port, e.to.node, e.to.port
    )
}

/// Renders `graph`, re-attaching margin text from `layout` when given.
fn render(graph: &TopologyGraph, layout: Option<&Script>) -> String {
    let mut pieces: Vec<(Anchor, String)> = vec![(
        Anchor::Header,
        format!(
            "{DIRECTIVE} agent {} v1\n",
            Value::from(graph.name()).to_canonical_json()
        ),
    )];
    for node in topo_order(graph) {
        pieces.push((Anchor::Node(node.id.clone()), render_block(node)));
    }
    for e in graph.edges() {
        pieces.push((Anchor::Wire(e.clone()), render_wire(e)));
    }
    pieces.push((Anchor::Tail, String::new()));

    let mut attached: BTreeMap<Anchor, String> = BTreeMap::new();
    if let Some(script) = layout {
        let present: BTreeSet<&Anchor> = pieces.iter().map(|(a, _)| a).collect();
        for (i, anchor) in script.anchors.iter().enumerate() {
            let Some(text) = script.margins.get(anchor) else {
                continue;
            };
            let home = std::iter::once(anchor)
                .chain(script.anchors[i + 1..].iter())
                .find(|a| present.contains(a))
                .cloned()
                .unwrap_or(Anchor::Tail);
            attached.entry(home).or_default().push_str(text);
        }
    }
    let mut out = String::new();
    for (anchor, text) in pieces {
        if let Some(margin) = attached.get(&anchor) {
            out.push_str(margin);
            if !margin.ends_with('\n') && !text.is_empty() {
                out.push('\n');
            }
        }
        out.push_str(&text);
    }
    out
}

/// Splits a leading JSON string off `s`, returning it and the rest.
fn json_string_prefix(s: &str) -> Option<(String, &str)> {
    let mut stream = serde_json::Deserializer::from_str(s).into_iter::<String>();
    let value = stream.next()?.ok()?;
    let used = stream.byte_offset();
    Some((value, &s[used..]))
}

fn parse_at(token: &str, line: usize) -> Result<(f64, f64), SyncError> {
    let inner = token
        .strip_prefix("at=(")
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| parse_err(line, format!("expected at=(x,y), found `{token}`")))?;
    let (x, y) = inner
        .split_once(',')
        .ok_or_else(|| parse_err(line, "at=(x,y) needs two numbers"))?;
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|n| n.is_finite())
            .ok_or_else(|| parse_err(line, format!("`{s}` is not a number")))
    };
    Ok((num(x)?, num(y)?))
}

fn parse_endpoint(s: &str, line: usize) -> Result<PortRef, SyncError> {
    let (node, port) = s
        .rsplit_once('.')
        .ok_or_else(|| parse_err(line, format!("wire endpoint `{s}` must be node.port")))?;
    if node.is_empty() || port.is_empty() {
        return Err(parse_err(line, format!("wire endpoint `{s}` must be node.port")));
    }
    Ok(PortRef::new(node, port))
}

/// Parses a script, keeping margin text and raw blocks for re-emission.
pub fn parse_script(text: &str) -> Result<Script, SyncError> {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let content = |i: usize| lines[i].strip_suffix('\n').unwrap_or(lines[i]);
    let mut name: Option<String> = None;
    let mut nodes: Vec<Node> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut wires: Vec<(Edge, usize)> = Vec::new();
    let mut anchors = Vec::new();
    let mut margins = BTreeMap::new();
    let mut blocks = BTreeMap::new();
    let mut pending = String::new();

    let mut i = 0;
    while i < lines.len() {
        let line_no = i + 1;
        let body = content(i);
        let directive = body == DIRECTIVE || body.starts_with("#aad ");
        if !directive {
            pending.push_str(lines[i]);
            i += 1;
            continue;
        }
        let rest = body[DIRECTIVE.len()..].trim_start();
        let (word, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        let args = args.trim();
        let anchor = match word {
            "agent" => {
                if name.is_some() {
                    return Err(parse_err(line_no, "second agent header"));
                }
                let (n, tail) = json_string_prefix(args)
                    .ok_or_else(|| parse_err(line_no, "agent name must be a quoted string"))?;
                if tail.trim() != "v1" {
                    return Err(parse_err(line_no, format!("unsupported script version `{}`", tail.trim())));
                }
                name = Some(n);
                i += 1;
                Anchor::Header
            }
            "node" => {
                if name.is_none() {
                    return Err(parse_err(line_no, "node block before the agent header"));
                }
                let mut tokens = args.split_whitespace();
                let id = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "node needs an id"))?
                    .to_string();
                if !is_identifier(&id) {
                    return Err(schema_err(line_no, format!("node id `{id}` is not an identifier")));
                }
                let kind_token = tokens
                    .next()
                    .and_then(|t| t.strip_prefix("kind="))
                    .ok_or_else(|| parse_err(line_no, "node needs kind=<kind>"))?;
                let kind: NodeKind = kind_token
                    .parse()
                    .map_err(|e: crate::model::UnknownKind| schema_err(line_no, e.to_string()))?;
                let at = tokens.next().map(|t| parse_at(t, line_no)).transpose()?;
                if let Some(extra) = tokens.next() {
                    return Err(parse_err(line_no, format!("unexpected `{extra}`")));
                }
                if let Some(first) = seen.insert(id.clone(), line_no) {
                    return Err(schema_err(
                        line_no,
                        format!("duplicate node id `{id}` (first declared on line {first})"),
                    ));
                }
                let mut config = Object::new();
                let mut raw = lines[i].to_string();
                i += 1;
                loop {
                    if i >= lines.len() {
                        return Err(parse_err(line_no, format!("node `{id}` has no {DIRECTIVE} end")));
                    }
                    let l = content(i);
                    raw.push_str(lines[i]);
                    if l == "#aad end" || l.starts_with("#aad end ") {
                        i += 1;
                        break;
                    }
                    if l == DIRECTIVE || l.starts_with("#aad ") {
                        return Err(parse_err(i + 1, format!("node `{id}` has no {DIRECTIVE} end")));
                    }
                    if l.trim().is_empty() {
                        i += 1;
                        continue;
                    }
                    let entry_line = i + 1;
                    let s = l.trim_start();
                    let (key, after) = if s.starts_with('"') {
                        json_string_prefix(s).ok_or_else(|| parse_err(entry_line, "bad quoted key"))?
                    } else {
                        let end = s.find(':').ok_or_else(|| parse_err(entry_line, "expected `key: value`"))?;
                        (s[..end].trim_end().to_string(), &s[end..])
                    };
                    let value_src = after
                        .strip_prefix(':')
                        .ok_or_else(|| parse_err(entry_line, "expected `:` after the key"))?
                        .trim();
                    let tag = value_src
                        .strip_prefix("<<")
                        .filter(|t| !t.is_empty() && t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
                    let value = match tag {
                        Some(tag) => {
                            let mut parts = Vec::new();
                            i += 1;
                            loop {
                                if i >= lines.len() {
                                    return Err(parse_err(entry_line, format!("heredoc `{tag}` is not closed")));
                                }
                                raw.push_str(lines[i]);
                                if content(i) == tag {
                                    break;
                                }
                                parts.push(content(i));
                                i += 1;
                            }
                            Value::from(parts.join("\n"))
                        }
                        None => Value::from_json_str(value_src)
                            .map_err(|e| parse_err(entry_line, format!("value for `{key}`: {e}")))?,
                    };
                    check_config_value(&kind, &key, &value).map_err(|m| schema_err(entry_line, m))?;
                    if config.insert(key.clone(), value).is_some() {
                        return Err(parse_err(entry_line, format!("key `{key}` repeated")));
                    }
                    i += 1;
                }
                let mut node = Node::new(id.clone(), kind);
                node.config = config;
                node.refresh_ports();
                if let Some((x, y)) = at {
                    node = node.at(x, y);
                }
                nodes.push(node);
                let anchor = Anchor::Node(id);
                blocks.insert(anchor.clone(), raw);
                anchor
            }
            "wire" => {
                let (from, to) = args
                    .split_once("->")
                    .ok_or_else(|| parse_err(line_no, "wire needs `a.port -> b.port`"))?;
                let edge = Edge {
                    from: parse_endpoint(from.trim(), line_no)?,
                    to: parse_endpoint(to.trim(), line_no)?,
                };
                wires.push((edge.clone(), line_no));
                i += 1;
                Anchor::Wire(edge)
            }
            "end" => return Err(parse_err(line_no, "`#aad end` outside a node block")),
            other => return Err(parse_err(line_no, format!("unknown directive `{other}`"))),
        };
        if !pending.is_empty() {
            margins.insert(anchor.clone(), std::mem::take(&mut pending));
        }
        anchors.push(anchor);
    }
    let name = name.ok_or_else(|| parse_err(1, "missing `#aad agent \"<name>\" v1` header"))?;
    if !pending.is_empty() {
        margins.insert(Anchor::Tail, pending);
    }
    anchors.push(Anchor::Tail);

    let mut edges = Vec::new();
    let mut edge_set = BTreeSet::new();
    for (edge, line) in wires {
        for end in [&edge.from, &edge.to] {
            if !seen.contains_key(&end.node) {
                return Err(schema_err(line, format!("wire references undeclared node `{}`", end.node)));
            }
        }
        if !edge_set.insert(edge.clone()) {
            return Err(schema_err(line, "wire repeated"));
        }
        edges.push(edge);
    }
    Ok(Script {
        graph: TopologyGraph::from_parts(name, None, nodes, edges),
        anchors,
        margins,
        blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeOrigin {
    FromText,
    FromGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ChangeItem {
    Edit { edit: GraphEdit },
    /// A stretch of the returned script rewritten from the graph side.
    TextRegion { anchor: String, line: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub origin: ChangeOrigin,
    pub item: ChangeItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub node: String,
    pub key: String,
    pub graph_value: Value,
    pub text_value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncResult {
    pub graph: TopologyGraph,
    pub script: String,
    pub changes: Vec<Change>,
    pub conflicts: Vec<Conflict>,
}

impl SyncResult {
    /// Graph edits that came from the text side.
    pub fn text_edits(&self) -> Vec<&GraphEdit> {
        self.changes
            .iter()
            .filter_map(|c| match (&c.origin, &c.item) {
                (ChangeOrigin::FromText, ChangeItem::Edit { edit }) => Some(edit),
                _ => None,
            })
            .collect()
    }
}

/// Edits turning `from` into `to`, ordered so they apply in sequence.
/// Edges of removed nodes go away with the node and are not listed.
pub fn diff(from: &TopologyGraph, to: &TopologyGraph) -> Vec<GraphEdit> {
    let mut removed = Vec::new();
    let mut added = Vec::new();
    let mut tweaks = Vec::new();
    let mut gone: BTreeSet<&str> = BTreeSet::new();
    for old in from.nodes() {
        match to.node(&old.id) {
            Some(new) if new.kind == old.kind => {
                for key in old.config.keys() {
                    if !new.config.contains_key(key) {
                        tweaks.push(GraphEdit::UnsetConfig {
                            id: old.id.clone(),
                            key: key.clone(),
                        });
                    }
                }
                for (key, value) in &new.config {
                    if old.config.get(key) != Some(value) {
                        tweaks.push(GraphEdit::SetConfig {
                            id: old.id.clone(),
                            key: key.clone(),
                            value: value.clone(),
                        });
                    }
                }
                if let Some(l) = &new.layout {
                    if old.layout.as_ref() != Some(l) {
                        tweaks.push(GraphEdit::MoveNode {
                            id: old.id.clone(),
                            x: l.x,
                            y: l.y,
                        });
                    }
                }
            }
            _ => {
                removed.push(GraphEdit::RemoveNode { id: old.id.clone() });
                gone.insert(&old.id);
            }
        }
    }
    for new in to.nodes() {
        if from.node(&new.id).is_none_or(|old| old.kind != new.kind) {
            added.push(GraphEdit::AddNode { node: new.clone() });
        }
    }
    let old_edges: BTreeSet<&Edge> = from.edges().iter().collect();
    let new_edges: BTreeSet<&Edge> = to.edges().iter().collect();
    let disconnects = old_edges
        .difference(&new_edges)
        .filter(|e| !gone.contains(e.from.node.as_str()) && !gone.contains(e.to.node.as_str()))
        .map(|e| GraphEdit::Disconnect { edge: (*e).clone() });
    let connects = new_edges
        .difference(&old_edges)
        .map(|e| GraphEdit::Connect { edge: (*e).clone() });
    let mut out = removed;
    out.extend(added);
    out.extend(tweaks);
    out.extend(disconnects.collect::<Vec<_>>());
    out.extend(connects);
    out
}

fn same_content(a: Option<&Node>, b: Option<&Node>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => a.kind == b.kind && a.config == b.config,
        _ => false,
    }
}

fn node_summary(n: Option<&Node>) -> Value {
    match n {
        None => Value::Null,
        Some(n) => Value::from(n.kind.to_string()),
    }
}

/// Two-input sync: `base` is both the ancestor and the current graph, so
/// every content difference comes from the text. Layout stays with the
/// graph.
pub fn sync(base: &TopologyGraph, edited: &str) -> Result<SyncResult, SyncError> {
    sync_with_ancestor(base, base, edited)
}

/// Three-way sync. `ancestor` is the graph both sides started from. When
/// both sides changed the same thing differently the text wins and the
/// clash is reported.
pub fn sync_with_ancestor(
    ancestor: &TopologyGraph,
    graph: &TopologyGraph,
    edited: &str,
) -> Result<SyncResult, SyncError> {
    let script = parse_script(edited)?;
    let text = &script.graph;
    let mut conflicts = Vec::new();

    let ids: BTreeSet<&str> = ancestor
        .nodes()
        .iter()
        .chain(graph.nodes())
        .chain(text.nodes())
        .map(|n| n.id.as_str())
        .collect();
    let mut nodes = Vec::new();
    for id in ids {
        let (a, g, t) = (ancestor.node(id), graph.node(id), text.node(id));
        let text_touched = !same_content(t, a);
        let graph_touched = !same_content(g, a);
        let chosen: Option<Node> = if !text_touched {
            g.cloned()
        } else if !graph_touched {
            t.map(|t| {
                let mut n = t.clone();
                if let Some(g) = g {
                    n.layout = g.layout.clone();
                }
                n
            })
        } else {
            match (g, t) {
                (Some(g), Some(t)) if g.kind == t.kind => {
                    let empty = Object::new();
                    let a_cfg = a.filter(|a| a.kind == t.kind).map(|a| &a.config).unwrap_or(&empty);
                    let keys: BTreeSet<&String> =
                        a_cfg.keys().chain(g.config.keys()).chain(t.config.keys()).collect();
                    let mut config = Object::new();
                    for key in keys {
                        let (av, gv, tv) = (a_cfg.get(key), g.config.get(key), t.config.get(key));
                        let pick = if tv == av {
                            gv
                        } else if gv == av || gv == tv {
                            tv
                        } else {
                            conflicts.push(Conflict {
                                node: id.to_string(),
                                key: key.clone(),
                                graph_value: gv.cloned().unwrap_or(Value::Null),
                                text_value: tv.cloned().unwrap_or(Value::Null),
                            });
                            tv
                        };
                        if let Some(v) = pick {
                            config.insert(key.clone(), v.clone());
                        }
                    }
                    let mut n = g.clone();
                    n.config = config;
                    n.refresh_ports();
                    Some(n)
                }
                _ => {
                    conflicts.push(Conflict {
                        node: id.to_string(),
                        key: "kind".into(),
                        graph_value: node_summary(g),
                        text_value: node_summary(t),
                    });
                    t.cloned()
                }
            }
        };
        if let Some(n) = chosen {
            nodes.push(n);
        }
    }

    let present: BTreeSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
    let a_edges: BTreeSet<&Edge> = ancestor.edges().iter().collect();
    let g_edges: BTreeSet<&Edge> = graph.edges().iter().collect();
    let t_edges: BTreeSet<&Edge> = text.edges().iter().collect();
    let mut by_port: BTreeMap<PortRef, Edge> = BTreeMap::new();
    let all: BTreeSet<&Edge> = a_edges.iter().chain(&g_edges).chain(&t_edges).copied().collect();
    let keep = |e: &Edge| {
        let (a_has, t_has) = (a_edges.contains(e), t_edges.contains(e));
        (if t_has != a_has { t_has } else { g_edges.contains(e) })
            && present.contains(e.from.node.as_str())
            && present.contains(e.to.node.as_str())
    };
    let mut edges: Vec<Edge> = Vec::new();
    for e in all.into_iter().filter(|e| keep(e)) {
        match by_port.get(&e.from) {
            Some(other) => {
                let (text_edge, graph_edge) = if t_edges.contains(e) { (e, other) } else { (other, e) };
                conflicts.push(Conflict {
                    node: e.from.node.clone(),
                    key: format!("wire:{}", e.from.port),
                    graph_value: Value::from(format!("{}.{}", graph_edge.to.node, graph_edge.to.port)),
                    text_value: Value::from(format!("{}.{}", text_edge.to.node, text_edge.to.port)),
                });
                let winner = text_edge.clone();
                edges.retain(|x| x.from != e.from);
                by_port.insert(e.from.clone(), winner.clone());
                edges.push(winner);
            }
            None => {
                by_port.insert(e.from.clone(), e.clone());
                edges.push(e.clone());
            }
        }
    }

    let name = if text.name() != ancestor.name() {
        text.name()
    } else {
        graph.name()
    };
    let merged = TopologyGraph::from_parts(name, None, nodes, edges);
    let rendered = render(&merged, Some(&script));

    let mut changes: Vec<Change> = diff(graph, &merged)
        .into_iter()
        .map(|edit| Change {
            origin: ChangeOrigin::FromText,
            item: ChangeItem::Edit { edit },
        })
        .collect();
    let mut regions = Vec::new();
    for node in topo_order(&merged) {
        let anchor = Anchor::Node(node.id.clone());
        let block = render_block(node);
        if script.blocks.get(&anchor) != Some(&block) && text.node(&node.id).is_some() {
            regions.push(anchor.label());
        }
    }
    for anchor in regions {
        let at = rendered
            .lines()
            .position(|l| l.starts_with(&format!("{DIRECTIVE} {anchor} ")) || l == format!("{DIRECTIVE} {anchor}"))
            .map(|p| p + 1)
            .unwrap_or(0);
        changes.push(Change {
            origin: ChangeOrigin::FromGraph,
            item: ChangeItem::TextRegion { anchor, line: at },
        });
    }
    for e in merged.edges() {
        if !t_edges.contains(e) {
            let anchor = Anchor::Wire(e.clone()).label();
            let at = rendered
                .lines()
                .position(|l| l == format!("{DIRECTIVE} {anchor}"))
                .map(|p| p + 1)
                .unwrap_or(0);
            changes.push(Change {
                origin: ChangeOrigin::FromGraph,
                item: ChangeItem::TextRegion { anchor, line: at },
            });
        }
    }
    Ok(SyncResult {
        graph: merged,
        script: rendered,
        changes,
        conflicts,
    })
}

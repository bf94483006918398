//! Reference interpreter: plain structural recursion over the graph. No
//! frames, no suspension, no tracing. Interaction and LLM nodes are not
//! supported.

use std::collections::BTreeMap;

use crate::model::{try_region, validate, Edge, NodeKind, PortRef, TopologyGraph, LOOPBACK_PORT};
use crate::scriptlet::{eval_str, render_str};
use crate::value::{Object, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleError {
    pub kind: String,
    pub node: String,
    pub message: String,
}

enum Flow {
    Continue,
    Finished(Value),
    Loopback(String, Value),
}

struct Raise {
    error: OracleError,
    /// Node the error is attributed to in the current graph.
    failing: String,
}

fn raise(kind: &str, node: &str, message: impl Into<String>) -> Raise {
    Raise {
        error: OracleError {
            kind: kind.into(),
            node: node.into(),
            message: message.into(),
        },
        failing: node.into(),
    }
}

#[derive(PartialEq)]
enum Scope {
    Top,
    Body,
}

struct Frame<'g> {
    graph: &'g TopologyGraph,
    scope: Scope,
    env: Object,
    inbox: BTreeMap<String, BTreeMap<Edge, Value>>,
    last: Option<String>,
}

pub struct Oracle<'l> {
    library: &'l BTreeMap<String, TopologyGraph>,
}

/// Runs `graph` on `input` to its result value.
pub fn run(
    graph: &TopologyGraph,
    input: Value,
    library: &BTreeMap<String, TopologyGraph>,
) -> Result<Value, OracleError> {
    let oracle = Oracle { library };
    let env = Object::from([("payload".to_string(), input.clone())]);
    let mut frame = Frame {
        graph,
        scope: Scope::Top,
        env,
        inbox: BTreeMap::new(),
        last: None,
    };
    let flow = oracle.walk(&mut frame, graph.entry(), input).map_err(|r| r.error)?;
    oracle.close(&frame, flow).map_err(|r| r.error)
}

impl Oracle<'_> {
    /// What a frame's final flow means for its caller.
    fn close(&self, frame: &Frame<'_>, flow: Flow) -> Result<Value, Raise> {
        let last = frame
            .last
            .clone()
            .unwrap_or_else(|| frame.graph.entry().to_string());
        match flow {
            Flow::Finished(v) => Ok(v),
            Flow::Continue => Err(raise("Stalled", &last, "no End node was reached")),
            Flow::Loopback(node, _) => Err(raise(
                "LoopbackOutsideLoop",
                &last,
                format!("loopback into `{node}` outside its loop body"),
            )),
        }
    }

    fn send(&self, f: &mut Frame<'_>, from: &str, port: &str, value: Value) -> Result<Flow, Raise> {
        let Some(edge) = f.graph.edge_from(&PortRef::new(from, port)).cloned() else {
            return Ok(Flow::Continue);
        };
        if edge.to.port == LOOPBACK_PORT {
            return Ok(Flow::Loopback(edge.to.node, value));
        }
        let target = f.graph.node(&edge.to.node).expect("edge target");
        if target.kind == NodeKind::Summary {
            let summary = edge.to.node.clone();
            f.inbox.entry(summary.clone()).or_default().insert(edge, value);
            let wired: Vec<&Edge> = f.graph.edges().iter().filter(|e| e.to.node == summary).collect();
            let inbox = &f.inbox[&summary];
            if !wired.iter().all(|e| inbox.contains_key(*e)) {
                return Ok(Flow::Continue);
            }
            let values: Vec<Value> = wired.iter().map(|e| inbox[*e].clone()).collect();
            f.inbox.remove(&summary);
            return self.walk(f, &summary, Value::from(values));
        }
        self.walk(f, &edge.to.node, value)
    }

    fn assign(&self, f: &mut Frame<'_>, id: &str, value: &Value) {
        if let Some(key) = f.graph.node(id).and_then(|n| n.config_str("assign")) {
            f.env.insert(key.to_string(), value.clone());
        }
    }

    fn walk(&self, f: &mut Frame<'_>, id: &str, input: Value) -> Result<Flow, Raise> {
        f.last = Some(id.to_string());
        let node = f.graph.node(id).expect("node").clone();
        let mut env = f.env.clone();
        env.insert("payload".into(), input.clone());
        let script = |src: &str| eval_str(src, &env).map_err(|e| raise(e.kind_name(), id, e.to_string()));
        let template = |src: &str| render_str(src, &env).map_err(|e| raise(e.kind_name(), id, e.to_string()));
        let (output, ports): (Value, Vec<String>) = match &node.kind {
            NodeKind::Start => (input, vec!["out".into()]),
            NodeKind::Connector => {
                let ports = match node.config.get("outputs") {
                    Some(Value::Array(names)) => names
                        .iter()
                        .map(|n| n.as_str().unwrap_or_default().to_string())
                        .collect(),
                    _ => vec!["out".into()],
                };
                (input, ports)
            }
            NodeKind::Prompt => {
                let text = template(node.config_str("template").unwrap_or(""))?;
                (Value::from(text), vec!["out".into()])
            }
            NodeKind::Code => (script(node.config_str("expr").unwrap_or("payload"))?, vec!["out".into()]),
            NodeKind::Branch => {
                let mut port = "else".to_string();
                if let Some(Value::Array(cases)) = node.config.get("cases") {
                    for case in cases {
                        let cond = case.get("cond").and_then(Value::as_str).unwrap_or("false");
                        if script(cond)?.truthy() {
                            port = case.get("port").and_then(Value::as_str).unwrap_or("").to_string();
                            break;
                        }
                    }
                }
                if f.graph.edge_from(&PortRef::new(id, port.as_str())).is_none() {
                    return Err(raise(
                        "RouteMissing",
                        id,
                        format!("branch chose `{port}` but it is not wired"),
                    ));
                }
                (input, vec![port])
            }
            NodeKind::Summary => {
                let items = match &input {
                    Value::Array(items) => items.clone(),
                    other => vec![other.clone()],
                };
                let merged = match node.config_str("mode") {
                    Some("concat_text") => {
                        let sep = node.config_str("separator").unwrap_or("\n");
                        let parts: Vec<String> = items.iter().map(Value::to_display_string).collect();
                        Value::from(parts.join(sep))
                    }
                    Some("template") => {
                        let mut env = env.clone();
                        env.insert("inputs".into(), Value::from(items));
                        let src = node.config_str("template").unwrap_or("");
                        Value::from(render_str(src, &env).map_err(|e| raise(e.kind_name(), id, e.to_string()))?)
                    }
                    _ => Value::from(items),
                };
                (merged, vec!["out".into()])
            }
            NodeKind::End => {
                if f.scope == Scope::Body {
                    return Err(raise("EndInLoopBody", id, "End reached inside a loop body"));
                }
                let result = script(node.config_str("result").unwrap_or("payload"))?;
                self.assign(f, id, &result);
                return Ok(Flow::Finished(result));
            }
            NodeKind::ErrorHandler => {
                self.assign(f, id, &input);
                return match self.send(f, id, "try", input) {
                    Err(r)
                        if try_region(f.graph, id).contains(&r.failing)
                            && f.graph.edge_from(&PortRef::new(id, "catch")).is_some() =>
                    {
                        let record = Value::object([
                            ("message", Value::from(r.error.message.as_str())),
                            ("node", Value::from(r.error.node.as_str())),
                            ("kind", Value::from(r.error.kind.as_str())),
                        ]);
                        self.send(f, id, "catch", record)
                    }
                    other => other,
                };
            }
            NodeKind::ArrayLoop => {
                let Value::Array(items) = input else {
                    return Err(raise(
                        "TypeMismatch",
                        id,
                        format!("ArrayLoop input must be an array, found {}", input.type_name()),
                    ));
                };
                let mut results = Vec::new();
                for (index, item) in items.into_iter().enumerate() {
                    let mut env = f.env.clone();
                    env.insert("item".into(), item.clone());
                    env.insert("index".into(), Value::from(index as i64));
                    env.insert("payload".into(), item.clone());
                    let mut body = Frame {
                        graph: f.graph,
                        scope: Scope::Body,
                        env,
                        inbox: BTreeMap::new(),
                        last: None,
                    };
                    let flow = self.send(&mut body, id, "body", item).map_err(|r| Raise { failing: id.into(), ..r })?;
                    match flow {
                        Flow::Loopback(target, v) if target == id => results.push(v),
                        other => {
                            let err = match self.close(&body, other) {
                                Err(r) => r,
                                Ok(_) => unreachable!("End in a body raises"),
                            };
                            return Err(Raise { failing: id.into(), ..err });
                        }
                    }
                }
                (Value::from(results), vec!["done".into()])
            }
            NodeKind::SubAgent => {
                let name = node.config_str("graph").unwrap_or_default();
                let Some(sub) = self.library.get(name) else {
                    return Err(raise("UnknownGraph", id, format!("no graph named `{name}`")));
                };
                let report = validate(sub);
                if !report.ok {
                    return Err(raise("InvalidGraph", id, report.summary()));
                }
                let mut frame = Frame {
                    graph: sub,
                    scope: Scope::Top,
                    env: Object::from([("payload".to_string(), input.clone())]),
                    inbox: BTreeMap::new(),
                    last: None,
                };
                let result = self
                    .walk(&mut frame, sub.entry(), input)
                    .and_then(|flow| self.close(&frame, flow))
                    .map_err(|r| Raise { failing: id.into(), ..r })?;
                (result, vec!["out".into()])
            }
            other => panic!("oracle does not run {other} nodes"),
        };
        self.assign(f, id, &output);
        for port in ports {
            match self.send(f, id, &port, output.clone())? {
                Flow::Continue => {}
                stop => return Ok(stop),
            }
        }
        Ok(Flow::Continue)
    }
}

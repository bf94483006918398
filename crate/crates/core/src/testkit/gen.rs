//! Seeded random graphs that always validate.
//!
//! Graphs are grown as nested chains. Every chain ends in an End node or
//! in its loop's loopback. Branch and ErrorHandler arms
//! never rejoin; Connector fan-outs rejoin in a Summary.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Edge, Node, NodeKind, PortRef, TopologyGraph, LOOPBACK_PORT};
use crate::value::Value;

const CODE_EXPRS: &[&str] = &[
    "str(payload)",
    "[payload, 1]",
    "len(str(payload))",
    "payload == 1 ? 2 : 3",
    "json(payload)",
    "contains(str(payload), \"1\") ? 10 : 0 - 1",
    "append([], payload)",
    "len(str(payload)) * 2 - 3",
];

/// Expressions that fail on some inputs.
const RISKY_EXPRS: &[&str] = &["payload + 1", "10 / (payload - 3)", "len(payload)", "payload % 4", "x + 1", "payload.kind"];

const LOOP_EXPRS: &[&str] = &["index * 10", "[item, index]", "str(item) + \"#\" + str(index)"];

const ARRAY_EXPRS: &[&str] = &["[payload, 2, 3]", "[1, 2]", "[]", "slice([4, 5, 6, 7], 0, 2)"];

const TEMPLATES: &[&str] = &["v={payload}", "[{payload}]", "{len(str(payload))}", "<{str(payload)}>", "x={x}"];

const CONDS: &[&str] = &["payload > 1", "len(str(payload)) > 2", "payload == 0", "contains(str(payload), \"1\")"];

const END_RESULTS: &[&str] = &["payload", "[payload]", "len(str(payload))"];

enum Scope {
    Root,
    Loop { node: String, closed: bool },
}

pub struct GraphGen {
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    next: usize,
    target: usize,
    /// Chains started but not yet terminated, each owing at least one node.
    open: usize,
    executable: bool,
}

impl GraphGen {
    /// Generator for graphs the reference interpreter can run.
    pub fn executable(seed: u64, target: usize) -> GraphGen {
        GraphGen::new(seed, target, true)
    }

    /// Generator that also emits LLM, interaction, tool and layout data.
    pub fn any(seed: u64, target: usize) -> GraphGen {
        GraphGen::new(seed, target, false)
    }

    fn new(seed: u64, target: usize, executable: bool) -> GraphGen {
        GraphGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            edges: Vec::new(),
            next: 0,
            target: target.max(2),
            open: 0,
            executable,
        }
    }

    pub fn generate(mut self, name: &str) -> TopologyGraph {
        let start = self.add("start", NodeKind::Start);
        self.chain(PortRef::new(start, "out"), &mut Scope::Root, 0);
        TopologyGraph::from_parts(name, None, self.nodes, self.edges)
    }

    fn pick<'a>(&mut self, from: &'a [&'a str]) -> &'a str {
        from.choose(&mut self.rng).expect("non-empty pool")
    }

    fn add(&mut self, prefix: &str, kind: NodeKind) -> String {
        let id = if prefix == "start" {
            "start".to_string()
        } else {
            self.next += 1;
            format!("{prefix}{}", self.next)
        };
        let mut node = Node::new(id.clone(), kind);
        if !self.executable && self.rng.random_bool(0.5) {
            let x = self.rng.random_range(-500..500) as f64 * 0.25;
            let y = self.rng.random_range(0..2000) as f64 / 3.0;
            node = node.at(x, y);
        }
        self.nodes.push(node);
        id
    }

    fn configure(&mut self, id: &str, key: &str, value: impl Into<Value>) {
        let node = self.nodes.iter_mut().find(|n| n.id == id).expect("node");
        node.config.insert(key.to_string(), value.into());
        node.refresh_ports();
    }

    fn link(&mut self, from: &PortRef, to: &str, port: &str) {
        self.edges.push(Edge::new((&from.node, &from.port), (to, port)));
    }

    /// Nodes still free after paying for every open chain's terminator.
    fn room(&self) -> usize {
        self.target.saturating_sub(self.nodes.len() + 1 + self.open)
    }

    fn full(&self) -> bool {
        self.room() == 0
    }

    fn maybe_assign(&mut self, id: &str) {
        if self.rng.random_bool(0.15) {
            self.configure(id, "assign", "x");
        }
    }

    fn linear(&mut self, in_loop: bool) -> String {
        let roll = self.rng.random_range(0..if self.executable { 2 } else { 9 });
        let id = match roll {
            0 => {
                let id = self.add("code", NodeKind::Code);
                let pool = match self.rng.random_range(0..10) {
                    0 => RISKY_EXPRS,
                    1 | 2 if in_loop => LOOP_EXPRS,
                    _ => CODE_EXPRS,
                };
                let e = self.pick(pool);
                self.configure(&id, "expr", e);
                id
            }
            1 => {
                let id = self.add("prompt", NodeKind::Prompt);
                let t = self.pick(TEMPLATES);
                self.configure(&id, "template", t);
                id
            }
            2 => {
                let id = self.add("llm", NodeKind::LlmCall);
                self.configure(&id, "prompt", "Say {payload}");
                if self.rng.random_bool(0.5) {
                    self.configure(&id, "model", "small");
                }
                id
            }
            3 => {
                let id = self.add("ask", NodeKind::AskText);
                self.configure(&id, "question", "Why {payload}?");
                id
            }
            4 => {
                let id = self.add("choose", NodeKind::AskChoice);
                self.configure(&id, "options", Value::from(vec![Value::from("a"), Value::from("b")]));
                id
            }
            5 => {
                let id = self.add("show", NodeKind::ShowMessage);
                self.configure(&id, "text", "note: {payload}\nline two \"quoted\"");
                id
            }
            6 => {
                let id = self.add("chart", NodeKind::ShowChart);
                self.configure(&id, "title", "t\u{e9}st");
                id
            }
            7 => {
                let id = self.add("tool", NodeKind::Tool);
                self.configure(&id, "component", "simweb/open_page");
                self.configure(&id, "args", Value::object([("url", Value::from("\"/index\""))]));
                id
            }
            _ => {
                let id = self.add("ext", NodeKind::extension("simweb", "read_text"));
                self.configure(&id, "note", Value::from(vec![Value::from(1), Value::Null, Value::from(true)]));
                id
            }
        };
        self.maybe_assign(&id);
        id
    }

    fn terminate(&mut self, at: PortRef, scope: &mut Scope) {
        match scope {
            Scope::Loop { node, closed: false } => {
                let node = node.clone();
                self.link(&at, &node, LOOPBACK_PORT);
                if let Scope::Loop { closed, .. } = scope {
                    *closed = true;
                }
            }
            _ => {
                let end = self.add("end", NodeKind::End);
                if self.rng.random_bool(0.3) {
                    let r = self.pick(END_RESULTS);
                    self.configure(&end, "result", r);
                }
                self.link(&at, &end, "in");
            }
        }
    }

    fn chain(&mut self, from: PortRef, scope: &mut Scope, depth: usize) {
        let mut at = from;
        loop {
            if self.full() {
                self.terminate(at, scope);
                return;
            }
            let roll = self.rng.random_range(0..100);
            let nested = depth < 4;
            let room = self.room();
            match roll {
                0..=44 => {
                    let id = self.linear(matches!(scope, Scope::Loop { .. }));
                    self.link(&at, &id, "in");
                    at = PortRef::new(id, "out");
                }
                45..=57 if room >= 2 => {
                    let fan = self.add("fan", NodeKind::Connector);
                    self.configure(&fan, "outputs", Value::from(vec![Value::from("a"), Value::from("b")]));
                    self.link(&at, &fan, "in");
                    let join = self.add("join", NodeKind::Summary);
                    let mode = *[None, Some("concat_text"), Some("template")]
                        .choose(&mut self.rng)
                        .expect("modes");
                    if let Some(mode) = mode {
                        self.configure(&join, "mode", mode);
                        if mode == "template" {
                            self.configure(&join, "template", "{inputs[0]}|{inputs[1]}");
                        }
                    }
                    for port in ["a", "b"] {
                        let mut arm = PortRef::new(fan.clone(), port);
                        for _ in 0..self.rng.random_range(0..3) {
                            if self.full() {
                                break;
                            }
                            let id = self.linear(matches!(scope, Scope::Loop { .. }));
                            self.link(&arm, &id, "in");
                            arm = PortRef::new(id, "out");
                        }
                        self.link(&arm, &join, "in");
                    }
                    self.maybe_assign(&join);
                    at = PortRef::new(join, "out");
                }
                58..=71 if nested && room >= 4 => {
                    if self.rng.random_bool(0.9) {
                        let source = self.add("items", NodeKind::Code);
                        let e = self.pick(ARRAY_EXPRS);
                        self.configure(&source, "expr", e);
                        self.link(&at, &source, "in");
                        at = PortRef::new(source, "out");
                    }
                    let lp = self.add("loop", NodeKind::ArrayLoop);
                    self.maybe_assign(&lp);
                    self.link(&at, &lp, "in");
                    let mut inner = Scope::Loop {
                        node: lp.clone(),
                        closed: false,
                    };
                    let first = self.linear(true);
                    self.link(&PortRef::new(lp.clone(), "body"), &first, "in");
                    self.open += 1;
                    self.chain(PortRef::new(first, "out"), &mut inner, depth + 1);
                    self.open -= 1;
                    at = PortRef::new(lp, "done");
                }
                72..=85 if nested && room >= 2 => {
                    let br = self.add("branch", NodeKind::Branch);
                    let cond = self.pick(CONDS);
                    let case = Value::object([("port", Value::from("then")), ("cond", Value::from(cond))]);
                    self.configure(&br, "cases", Value::from(vec![case]));
                    self.link(&at, &br, "in");
                    let wire_else = self.rng.random_bool(0.85);
                    self.open += usize::from(wire_else);
                    self.chain(PortRef::new(br.clone(), "then"), scope, depth + 1);
                    if wire_else {
                        self.open -= 1;
                        self.chain(PortRef::new(br, "else"), scope, depth + 1);
                    }
                    return;
                }
                86..=99 if nested && room >= 3 => {
                    let h = self.add("guard", NodeKind::ErrorHandler);
                    self.link(&at, &h, "in");
                    let wire_catch = self.rng.random_bool(0.85);
                    self.open += 2 * usize::from(wire_catch);
                    self.chain(PortRef::new(h.clone(), "try"), scope, depth + 1);
                    if wire_catch {
                        self.open -= 2;
                        let rec = self.add("caught", NodeKind::Prompt);
                        let t = *["err: {payload.kind}", "{payload.kind}@{payload.node}"]
                            .choose(&mut self.rng)
                            .expect("templates");
                        self.configure(&rec, "template", t);
                        self.link(&PortRef::new(h, "catch"), &rec, "in");
                        self.chain(PortRef::new(rec, "out"), scope, depth + 1);
                    }
                    return;
                }
                _ => {
                    self.terminate(at, scope);
                    return;
                }
            }
        }
    }
}

/// A random input value for executable graphs.
pub fn random_input(seed: u64) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    match rng.random_range(0..6) {
        0 => Value::from("ab1"),
        1 => Value::from(vec![Value::from(1), Value::from(2)]),
        _ => Value::from(rng.random_range(-3..7i64)),
    }
}

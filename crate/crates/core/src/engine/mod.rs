//! Executes topology graphs one node per step.
//!
//! Each frame keeps a LIFO stack of pending tokens. A node's outputs are
//! pushed in reverse port order, so execution follows a depth-first walk
//! of the graph. Deliveries into a Summary and ArrayLoop loopbacks are
//! bookkeeping tokens resolved between steps.

mod manager;
mod node;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use manager::{seeded_session_id, SessionManager, SharedSession};

use crate::gateway::{Gateway, GatewayMode, MimicRule, UsageTotals};
use crate::model::{
    try_region, validate_with, Edge, NodeKind, PortRef, TopologyGraph, ValidationReport,
    LOOPBACK_PORT,
};
use crate::plugin::PluginRegistry;
use crate::trace::{TraceEvent, TraceKind, TraceLog};
use crate::value::{Object, Value};

/// Shared services: the graph library for SubAgent lookups, the LLM
/// gateway and the plugin registry.
#[derive(Debug)]
pub struct Runtime {
    pub library: BTreeMap<String, Arc<TopologyGraph>>,
    pub gateway: Arc<Gateway>,
    pub plugins: Arc<RwLock<PluginRegistry>>,
    /// Working directory for external Code processes.
    pub work_dir: Option<PathBuf>,
}

impl Runtime {
    pub fn new(gateway: Arc<Gateway>) -> Runtime {
        Runtime {
            library: BTreeMap::new(),
            gateway,
            plugins: Arc::new(RwLock::new(PluginRegistry::new())),
            work_dir: None,
        }
    }

    /// Runtime with the mock provider, no plugins and no library.
    pub fn mock(seed: u64) -> Runtime {
        Runtime::new(Arc::new(Gateway::mock(seed)))
    }

    pub fn with_graph(mut self, graph: TopologyGraph) -> Runtime {
        self.library.insert(graph.name().to_string(), Arc::new(graph));
        self
    }

    pub fn with_plugins(mut self, plugins: PluginRegistry) -> Runtime {
        self.plugins = Arc::new(RwLock::new(plugins));
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub breakpoints: BTreeSet<String>,
    pub mimic_rules: Vec<MimicRule>,
    /// Overrides the gateway's mode for this session.
    pub mode: Option<GatewayMode>,
    /// Seed passed to model calls that do not set one.
    pub llm_seed: Option<u64>,
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FrameKind {
    Root,
    SubAgent { node: String },
    LoopBody { node: String, index: usize, item: Value },
}

impl FrameKind {
    pub fn node(&self) -> Option<&str> {
        match self {
            FrameKind::Root => None,
            FrameKind::SubAgent { node } | FrameKind::LoopBody { node, .. } => Some(node),
        }
    }
}

/// `{message, node, kind}`: what a failing node produces, and what an
/// ErrorHandler routes on `catch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeError {
    pub kind: String,
    pub message: String,
    pub node: String,
}

impl NodeError {
    pub fn new(kind: &str, node: &str, message: impl Into<String>) -> NodeError {
        NodeError {
            kind: kind.to_string(),
            message: message.into(),
            node: node.to_string(),
        }
    }

    pub fn to_value(&self) -> Value {
        Value::object([
            ("message", Value::from(self.message.as_str())),
            ("node", Value::from(self.node.as_str())),
            ("kind", Value::from(self.kind.as_str())),
        ])
    }
}

impl std::fmt::Display for NodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}: {}", self.kind, self.node, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionStatus {
    Ready,
    Running,
    PausedBreakpoint(String),
    AwaitingInput { node: String, prompt: PromptSpec },
    Finished(Value),
    Failed(NodeError),
}

impl SessionStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, SessionStatus::Finished(_) | SessionStatus::Failed(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            SessionStatus::Ready => "ready",
            SessionStatus::Running => "running",
            SessionStatus::PausedBreakpoint(_) => "paused",
            SessionStatus::AwaitingInput { .. } => "awaiting_input",
            SessionStatus::Finished(_) => "finished",
            SessionStatus::Failed(_) => "failed",
        }
    }

    pub fn to_value(&self) -> Value {
        let mut map = Object::new();
        map.insert("state".into(), Value::from(self.name()));
        match self {
            SessionStatus::PausedBreakpoint(n) => {
                map.insert("node".into(), Value::from(n.as_str()));
            }
            SessionStatus::AwaitingInput { node, prompt } => {
                map.insert("node".into(), Value::from(node.as_str()));
                map.insert("prompt".into(), prompt_value(prompt));
            }
            SessionStatus::Finished(v) => {
                map.insert("result".into(), v.clone());
            }
            SessionStatus::Failed(e) => {
                map.insert("error".into(), e.to_value());
            }
            SessionStatus::Ready | SessionStatus::Running => {}
        }
        Value::Object(map)
    }
}

pub(crate) fn prompt_value(prompt: &PromptSpec) -> Value {
    let mut map = Object::new();
    map.insert("question".into(), Value::from(prompt.question.as_str()));
    if let Some(options) = &prompt.options {
        map.insert(
            "options".into(),
            Value::from(options.iter().map(|o| Value::from(o.as_str())).collect::<Vec<_>>()),
        );
    }
    Value::Object(map)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Advanced(String),
    Paused(String),
    NeedsInput { node: String, prompt: PromptSpec },
    Done(Value),
    Error(NodeError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid graph: {}", .0.summary())]
    InvalidGraph(ValidationReport),
    #[error("illegal state: {0}")]
    IllegalState(String),
    #[error("`{value}` is not one of {options:?}")]
    InvalidChoice { value: Value, options: Vec<String> },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session failed: {error}")]
    Failed { error: NodeError, trace: Box<TraceLog> },
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::InvalidGraph(_) => "InvalidGraph",
            EngineError::IllegalState(_) => "IllegalState",
            EngineError::InvalidChoice { .. } => "InvalidChoice",
            EngineError::UnknownSession(_) => "UnknownSession",
            EngineError::Failed { .. } => "Failed",
        }
    }
}

#[derive(Debug, Clone)]
enum Token {
    Exec { node: String, input: Value },
    Deliver { summary: String, edge: Edge, value: Value },
    Loopback { node: String, value: Value },
}

#[derive(Debug, Clone)]
struct Handler {
    node: String,
    mark: usize,
    region: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct LoopState {
    items: Vec<Value>,
    results: Vec<Value>,
    base_env: Object,
}

#[derive(Debug, Clone)]
struct Frame {
    graph: Arc<TopologyGraph>,
    kind: FrameKind,
    env: Object,
    stack: Vec<Token>,
    inbox: BTreeMap<String, BTreeMap<Edge, Value>>,
    handlers: Vec<Handler>,
    looping: Option<LoopState>,
    last_node: Option<String>,
}

impl Frame {
    fn new(graph: Arc<TopologyGraph>, kind: FrameKind, env: Object) -> Frame {
        Frame {
            graph,
            kind,
            env,
            stack: Vec::new(),
            inbox: BTreeMap::new(),
            handlers: Vec::new(),
            looping: None,
            last_node: None,
        }
    }

    fn pop(&mut self) -> Option<Token> {
        let token = self.stack.pop();
        let len = self.stack.len();
        self.handlers.retain(|h| h.mark <= len);
        token
    }

    fn next_node(&self) -> Option<&str> {
        match self.stack.last() {
            Some(Token::Exec { node, .. }) => Some(node),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSnapshot {
    #[serde(flatten)]
    pub kind: FrameKind,
    pub node: Option<String>,
    pub env: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session: String,
    pub graph: String,
    pub status: Value,
    pub frames: Vec<FrameSnapshot>,
    pub breakpoints: Vec<String>,
    pub usage: UsageTotals,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One running instance of a graph.
#[derive(Debug)]
pub struct Session {
    id: String,
    graph: Arc<TopologyGraph>,
    runtime: Arc<Runtime>,
    frames: Vec<Frame>,
    status: SessionStatus,
    trace: Vec<TraceEvent>,
    usage: UsageTotals,
    breakpoints: BTreeSet<String>,
    mimic_rules: Vec<MimicRule>,
    mode: Option<GatewayMode>,
    llm_seed: Option<u64>,
    call_index: u64,
    scratch: BTreeMap<String, Value>,
    started_at: u64,
    ended_at: Option<u64>,
}

/// Validates `graph` and prepares a session; no node runs yet.
pub fn start_session(
    runtime: Arc<Runtime>,
    graph: TopologyGraph,
    input: Value,
    options: SessionOptions,
) -> Result<Session, EngineError> {
    let report = {
        let plugins = runtime.plugins.read().expect("plugin lock");
        validate_with(&graph, Some(&*plugins))
    };
    if !report.ok {
        return Err(EngineError::InvalidGraph(report));
    }
    let graph = Arc::new(graph);
    let id = options
        .id
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let mut root = Frame::new(
        graph.clone(),
        FrameKind::Root,
        Object::from([("payload".to_string(), input.clone())]),
    );
    root.stack.push(Token::Exec {
        node: graph.entry().to_string(),
        input: input.clone(),
    });
    let mut session = Session {
        id,
        graph: graph.clone(),
        runtime,
        frames: vec![root],
        status: SessionStatus::Ready,
        trace: Vec::new(),
        usage: UsageTotals::default(),
        breakpoints: options.breakpoints,
        mimic_rules: options.mimic_rules,
        mode: options.mode,
        llm_seed: options.llm_seed,
        call_index: 0,
        scratch: BTreeMap::new(),
        started_at: now_ms(),
        ended_at: None,
    };
    session.event(
        TraceKind::SessionStart,
        None,
        Value::object([
            ("graph", Value::from(graph.name())),
            ("input", input),
        ]),
    );
    Ok(session)
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn graph(&self) -> &TopologyGraph {
        &self.graph
    }

    pub fn status(&self) -> &SessionStatus {
        &self.status
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn usage(&self) -> UsageTotals {
        self.usage
    }

    pub fn breakpoints(&self) -> &BTreeSet<String> {
        &self.breakpoints
    }

    pub fn started_at(&self) -> u64 {
        self.started_at
    }

    pub fn ended_at(&self) -> Option<u64> {
        self.ended_at
    }

    pub fn set_breakpoint(&mut self, node: &str) {
        self.breakpoints.insert(node.to_string());
    }

    pub fn clear_breakpoint(&mut self, node: &str) -> bool {
        self.breakpoints.remove(node)
    }

    pub fn mimic_rules(&self) -> &[MimicRule] {
        &self.mimic_rules
    }

    pub fn add_mimic_rule(&mut self, rule: MimicRule) {
        self.mimic_rules.retain(|r| r.id != rule.id);
        self.mimic_rules.push(rule);
    }

    pub fn clear_mimic_rules(&mut self) {
        self.mimic_rules.clear();
    }

    pub fn trace_log(&self) -> TraceLog {
        TraceLog {
            session: self.id.clone(),
            graph_name: self.graph.name().to_string(),
            events: self.trace.clone(),
        }
    }

    /// The node that the next step would execute, with its frame depth.
    /// Resolves pending deliveries first, which may emit frame events.
    pub fn next_node(&mut self) -> Option<(String, usize)> {
        if self.status.is_terminal() {
            return None;
        }
        if let SessionStatus::AwaitingInput { node, .. } = &self.status {
            return Some((node.clone(), self.frames.len()));
        }
        if let Ok(Some(_)) = self.settle() {
            return None;
        }
        let top = self.frames.last()?;
        top.next_node().map(|n| (n.to_string(), self.frames.len()))
    }

    /// Parks a ready or running session before its next node without
    /// recording a breakpoint hit. The parked node runs on the next step.
    pub fn pause_at_next(&mut self) -> Option<(String, usize)> {
        if !matches!(
            self.status,
            SessionStatus::Ready | SessionStatus::Running | SessionStatus::PausedBreakpoint(_)
        ) {
            return None;
        }
        let (node, depth) = self.next_node()?;
        if !self.status.is_terminal() {
            self.status = SessionStatus::PausedBreakpoint(node.clone());
        }
        Some((node, depth))
    }

    /// Graph of the innermost frame.
    pub fn current_graph(&self) -> &TopologyGraph {
        self.frames.last().map(|f| f.graph.as_ref()).unwrap_or(self.graph.as_ref())
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let mut frames = Vec::new();
        for (i, frame) in self.frames.iter().enumerate() {
            let node = match self.frames.get(i + 1) {
                Some(child) => child.kind.node().map(str::to_string),
                None => match &self.status {
                    SessionStatus::AwaitingInput { node, .. } => Some(node.clone()),
                    _ => frame.next_node().map(str::to_string),
                },
            };
            frames.push(FrameSnapshot {
                kind: frame.kind.clone(),
                node,
                env: Value::Object(frame.env.clone()),
            });
        }
        SessionSnapshot {
            session: self.id.clone(),
            graph: self.graph.name().to_string(),
            status: self.status.to_value(),
            frames,
            breakpoints: self.breakpoints.iter().cloned().collect(),
            usage: self.usage,
        }
    }

    /// Executes exactly one node, pausing first if it carries a breakpoint.
    pub fn step(&mut self) -> Result<StepOutcome, EngineError> {
        self.step_inner(true)
    }

    /// Steps until the session pauses, waits for input, or ends.
    pub fn continue_run(&mut self) -> Result<StepOutcome, EngineError> {
        loop {
            match self.step_inner(true)? {
                StepOutcome::Advanced(_) => continue,
                other => return Ok(other),
            }
        }
    }

    /// Headless run: breakpoints are ignored and interaction nodes are
    /// answered by `answer`.
    pub fn run_to_completion(
        &mut self,
        mut answer: impl FnMut(&str, &PromptSpec) -> Value,
    ) -> Result<Value, EngineError> {
        loop {
            let outcome = match &self.status {
                SessionStatus::AwaitingInput { node, prompt } => {
                    let value = answer(node, prompt);
                    self.provide_input(value)?
                }
                _ => self.step_inner(false)?,
            };
            match outcome {
                StepOutcome::Done(v) => return Ok(v),
                StepOutcome::Error(error) => {
                    return Err(EngineError::Failed {
                        error,
                        trace: Box::new(self.trace_log()),
                    })
                }
                _ => {}
            }
        }
    }

    pub fn provide_input(&mut self, value: Value) -> Result<StepOutcome, EngineError> {
        let (node_id, prompt) = match &self.status {
            SessionStatus::AwaitingInput { node, prompt } => (node.clone(), prompt.clone()),
            other => {
                return Err(EngineError::IllegalState(format!(
                    "session is {}, not awaiting input",
                    other.name()
                )))
            }
        };
        if let Some(options) = &prompt.options {
            let ok = value.as_str().is_some_and(|s| options.iter().any(|o| o == s));
            if !ok {
                return Err(EngineError::InvalidChoice {
                    value,
                    options: options.clone(),
                });
            }
        }
        self.status = SessionStatus::Running;
        self.finish_node(&node_id, value.clone());
        self.emit(&node_id, vec![("out".to_string(), value)]);
        Ok(StepOutcome::Advanced(node_id))
    }

    fn step_inner(&mut self, honor_breakpoints: bool) -> Result<StepOutcome, EngineError> {
        let resume = match &self.status {
            SessionStatus::Finished(_) | SessionStatus::Failed(_) => {
                return Err(EngineError::IllegalState(format!(
                    "session is {}",
                    self.status.name()
                )))
            }
            SessionStatus::AwaitingInput { node, .. } => {
                return Err(EngineError::IllegalState(format!(
                    "session is waiting for input at `{node}`"
                )))
            }
            SessionStatus::PausedBreakpoint(n) => Some(n.clone()),
            SessionStatus::Ready | SessionStatus::Running => None,
        };
        self.status = SessionStatus::Running;
        if let Some(outcome) = self.settle()? {
            return Ok(outcome);
        }
        let frame = self.frames.last_mut().expect("root frame");
        let Some(node) = frame.next_node().map(str::to_string) else {
            return Err(EngineError::IllegalState("nothing to execute".into()));
        };
        if honor_breakpoints && self.breakpoints.contains(&node) && resume.as_deref() != Some(&node) {
            self.status = SessionStatus::PausedBreakpoint(node.clone());
            self.event(TraceKind::BreakpointHit, Some(&node), Value::Null);
            return Ok(StepOutcome::Paused(node));
        }
        let Some(Token::Exec { node, input }) = self.frames.last_mut().expect("root frame").pop() else {
            unreachable!("next_node saw an Exec token");
        };
        Ok(self.execute(&node, input))
    }

    /// Resolves bookkeeping tokens until an Exec token is on top. Returns
    /// an outcome when the session ended meanwhile.
    fn settle(&mut self) -> Result<Option<StepOutcome>, EngineError> {
        loop {
            if self.status.is_terminal() {
                return Ok(Some(match &self.status {
                    SessionStatus::Finished(v) => StepOutcome::Done(v.clone()),
                    SessionStatus::Failed(e) => StepOutcome::Error(e.clone()),
                    _ => unreachable!(),
                }));
            }
            let frame = self.frames.last_mut().expect("root frame");
            match frame.stack.last() {
                Some(Token::Exec { .. }) => return Ok(None),
                None => {
                    let node = frame
                        .last_node
                        .clone()
                        .unwrap_or_else(|| frame.graph.entry().to_string());
                    let err = NodeError::new("Stalled", &node, "no End node was reached");
                    if let StepOutcome::Error(e) = self.raise(err, true) {
                        return Ok(Some(StepOutcome::Error(e)));
                    }
                }
                Some(Token::Deliver { .. }) => {
                    let Some(Token::Deliver { summary, edge, value }) = frame.pop() else {
                        unreachable!()
                    };
                    let wired: Vec<Edge> = frame
                        .graph
                        .edges()
                        .iter()
                        .filter(|e| e.to.node == summary)
                        .cloned()
                        .collect();
                    let inbox = frame.inbox.entry(summary.clone()).or_default();
                    inbox.insert(edge, value);
                    if wired.iter().all(|e| inbox.contains_key(e)) {
                        let inbox = frame.inbox.remove(&summary).unwrap_or_default();
                        let values: Vec<Value> = wired
                            .iter()
                            .filter_map(|e| inbox.get(e).cloned())
                            .collect();
                        frame.stack.push(Token::Exec {
                            node: summary,
                            input: Value::from(values),
                        });
                    }
                }
                Some(Token::Loopback { .. }) => {
                    let Some(Token::Loopback { node, value }) = frame.pop() else {
                        unreachable!()
                    };
                    let owner = match &frame.kind {
                        FrameKind::LoopBody { node: owner, .. } => Some(owner.clone()),
                        _ => None,
                    };
                    if owner.as_deref() != Some(node.as_str()) {
                        let at = frame.last_node.clone().unwrap_or_else(|| node.clone());
                        let err = NodeError::new(
                            "LoopbackOutsideLoop",
                            &at,
                            format!("loopback into `{node}` outside its loop body"),
                        );
                        if let StepOutcome::Error(e) = self.raise(err, true) {
                            return Ok(Some(StepOutcome::Error(e)));
                        }
                        continue;
                    }
                    self.next_iteration(&node, value);
                }
            }
        }
    }

    fn next_iteration(&mut self, loop_node: &str, result: Value) {
        let depth = self.frames.len();
        let mut frame = self.frames.pop().expect("loop frame");
        self.trace_at(TraceKind::FramePop, Some(loop_node), depth, Value::Null);
        let mut state = frame.looping.take().expect("loop state");
        state.results.push(result);
        let index = state.results.len();
        if index < state.items.len() {
            self.push_loop_frame(frame.graph.clone(), loop_node, state, index);
        } else {
            let results = Value::from(state.results);
            self.finish_node(loop_node, results.clone());
            self.emit(loop_node, vec![("done".to_string(), results)]);
        }
    }

    fn push_loop_frame(
        &mut self,
        graph: Arc<TopologyGraph>,
        loop_node: &str,
        state: LoopState,
        index: usize,
    ) {
        let item = state.items[index].clone();
        let mut env = state.base_env.clone();
        env.insert("item".into(), item.clone());
        env.insert("index".into(), Value::from(index as i64));
        env.insert("payload".into(), item.clone());
        let mut frame = Frame::new(
            graph,
            FrameKind::LoopBody {
                node: loop_node.to_string(),
                index,
                item: item.clone(),
            },
            env,
        );
        frame.looping = Some(state);
        self.frames.push(frame);
        let depth = self.frames.len();
        self.trace_at(
            TraceKind::FramePush,
            Some(loop_node),
            depth,
            Value::object([
                ("kind", Value::from("LoopBody")),
                ("index", Value::from(index as i64)),
            ]),
        );
        let body = PortRef::new(loop_node, "body");
        let targets = self.route(&body, item);
        self.push_tokens(targets);
    }

    /// Runs the node whose Exec token was just popped.
    fn execute(&mut self, node_id: &str, input: Value) -> StepOutcome {
        let frame = self.frames.last_mut().expect("root frame");
        frame.last_node = Some(node_id.to_string());
        let graph = frame.graph.clone();
        let node = graph.node(node_id).expect("validated graph").clone();
        self.event(
            TraceKind::NodeEnter,
            Some(node_id),
            Value::object([("input", input.clone())]),
        );
        match node.kind {
            NodeKind::End => {
                if let FrameKind::LoopBody { .. } = self.frames.last().expect("frame").kind {
                    return self.raise(
                        NodeError::new("EndInLoopBody", node_id, "End reached inside a loop body"),
                        false,
                    );
                }
                let result = match self.eval_config_expr(&node, "result", "payload", &input) {
                    Ok(v) => v,
                    Err(e) => return self.raise(e, false),
                };
                self.finish_node(node_id, result.clone());
                self.end_frame(node_id, result)
            }
            NodeKind::ArrayLoop => {
                let Value::Array(items) = input else {
                    let err = NodeError::new(
                        "TypeMismatch",
                        node_id,
                        format!("ArrayLoop input must be an array, found {}", input.type_name()),
                    );
                    return self.raise(err, false);
                };
                if items.is_empty() {
                    let results = Value::from(Vec::new());
                    self.finish_node(node_id, results.clone());
                    self.emit(node_id, vec![("done".to_string(), results)]);
                    return StepOutcome::Advanced(node_id.to_string());
                }
                let state = LoopState {
                    items,
                    results: Vec::new(),
                    base_env: self.frames.last().expect("frame").env.clone(),
                };
                self.push_loop_frame(graph, node_id, state, 0);
                StepOutcome::Advanced(node_id.to_string())
            }
            NodeKind::SubAgent => {
                let name = node.config_str("graph").unwrap_or_default().to_string();
                let sub = match self.runtime.library.get(&name) {
                    Some(g) => g.clone(),
                    None => {
                        let err = NodeError::new("UnknownGraph", node_id, format!("no graph named `{name}`"));
                        return self.raise(err, false);
                    }
                };
                let report = {
                    let plugins = self.runtime.plugins.read().expect("plugin lock");
                    validate_with(&sub, Some(&*plugins))
                };
                if !report.ok {
                    let err = NodeError::new("InvalidGraph", node_id, report.summary());
                    return self.raise(err, false);
                }
                let mut frame = Frame::new(
                    sub.clone(),
                    FrameKind::SubAgent {
                        node: node_id.to_string(),
                    },
                    Object::from([("payload".to_string(), input.clone())]),
                );
                frame.stack.push(Token::Exec {
                    node: sub.entry().to_string(),
                    input,
                });
                self.frames.push(frame);
                let depth = self.frames.len();
                self.trace_at(
                    TraceKind::FramePush,
                    Some(node_id),
                    depth,
                    Value::object([("kind", Value::from("SubAgent")), ("graph", Value::from(name))]),
                );
                StepOutcome::Advanced(node_id.to_string())
            }
            NodeKind::AskText | NodeKind::AskChoice => {
                let env = self.scope(&input);
                let question = match node.config_str("question") {
                    Some(t) => match crate::scriptlet::render_str(t, &env) {
                        Ok(q) => q,
                        Err(e) => {
                            let err = NodeError::new(e.kind_name(), node_id, e.to_string());
                            return self.raise(err, false);
                        }
                    },
                    None => input.to_display_string(),
                };
                let options = node.config.get("options").and_then(Value::as_array).map(|opts| {
                    opts.iter()
                        .filter_map(|o| o.as_str().map(str::to_string))
                        .collect::<Vec<_>>()
                });
                let prompt = PromptSpec { question, options };
                self.status = SessionStatus::AwaitingInput {
                    node: node_id.to_string(),
                    prompt: prompt.clone(),
                };
                StepOutcome::NeedsInput {
                    node: node_id.to_string(),
                    prompt,
                }
            }
            NodeKind::ErrorHandler => {
                let frame = self.frames.last_mut().expect("frame");
                let mark = frame.stack.len();
                frame.handlers.push(Handler {
                    node: node_id.to_string(),
                    mark,
                    region: try_region(&graph, node_id),
                });
                self.finish_node(node_id, input.clone());
                self.emit(node_id, vec![("try".to_string(), input)]);
                StepOutcome::Advanced(node_id.to_string())
            }
            _ => match self.run_simple(&node, input) {
                Ok((output, ports)) => {
                    if node.kind == NodeKind::Branch {
                        let port = &ports[0];
                        if graph.edge_from(&PortRef::new(node_id, port.as_str())).is_none() {
                            let err = NodeError::new(
                                "RouteMissing",
                                node_id,
                                format!("branch chose `{port}` but it is not wired"),
                            );
                            return self.raise(err, false);
                        }
                    }
                    self.finish_node(node_id, output.clone());
                    let outs = ports.into_iter().map(|p| (p, output.clone())).collect();
                    self.emit(node_id, outs);
                    StepOutcome::Advanced(node_id.to_string())
                }
                Err(e) => self.raise(e, false),
            },
        }
    }

    /// End reached: finish the session or return to the calling frame.
    fn end_frame(&mut self, end_node: &str, result: Value) -> StepOutcome {
        match self.frames.last().expect("frame").kind.clone() {
            FrameKind::Root => {
                self.status = SessionStatus::Finished(result.clone());
                self.ended_at = Some(now_ms());
                self.event(
                    TraceKind::SessionEnd,
                    None,
                    Value::object([("status", Value::from("finished")), ("result", result.clone())]),
                );
                StepOutcome::Done(result)
            }
            FrameKind::SubAgent { node } => {
                let depth = self.frames.len();
                self.frames.pop();
                self.trace_at(TraceKind::FramePop, Some(&node), depth, Value::Null);
                self.finish_node(&node, result.clone());
                self.emit(&node, vec![("out".to_string(), result)]);
                StepOutcome::Advanced(end_node.to_string())
            }
            FrameKind::LoopBody { .. } => unreachable!("checked before evaluation"),
        }
    }

    /// Records `assign` and the NodeExit event for a node in the top frame.
    fn finish_node(&mut self, node_id: &str, output: Value) {
        let frame = self.frames.last_mut().expect("frame");
        let assign = frame
            .graph
            .node(node_id)
            .and_then(|n| n.config_str("assign"))
            .map(str::to_string);
        if let Some(key) = assign {
            frame.env.insert(key.clone(), output.clone());
            self.event(
                TraceKind::VarUpdate,
                Some(node_id),
                Value::object([("key", Value::from(key)), ("value", output.clone())]),
            );
        }
        self.event(TraceKind::NodeExit, Some(node_id), Value::object([("output", output)]));
    }

    fn route(&self, from: &PortRef, value: Value) -> Option<Token> {
        let frame = self.frames.last().expect("frame");
        let edge = frame.graph.edge_from(from)?;
        let target = frame.graph.node(&edge.to.node)?;
        Some(if edge.to.port == LOOPBACK_PORT {
            Token::Loopback {
                node: edge.to.node.clone(),
                value,
            }
        } else if target.kind == NodeKind::Summary {
            Token::Deliver {
                summary: edge.to.node.clone(),
                edge: edge.clone(),
                value,
            }
        } else {
            Token::Exec {
                node: edge.to.node.clone(),
                input: value,
            }
        })
    }

    fn push_tokens(&mut self, tokens: impl IntoIterator<Item = Token>) {
        let frame = self.frames.last_mut().expect("frame");
        let tokens: Vec<Token> = tokens.into_iter().collect();
        frame.stack.extend(tokens.into_iter().rev());
    }

    /// Sends outputs along wired ports; unwired ports drop their value.
    fn emit(&mut self, node_id: &str, outputs: Vec<(String, Value)>) {
        let tokens: Vec<Token> = outputs
            .into_iter()
            .filter_map(|(port, value)| self.route(&PortRef::new(node_id, port), value))
            .collect();
        self.push_tokens(tokens);
    }

    /// Unwinds to the innermost ErrorHandler whose try region holds the
    /// failing node, crossing frames as needed. `frame_level` errors (a
    /// stalled frame) cannot be caught inside the frame that raised them.
    fn raise(&mut self, error: NodeError, frame_level: bool) -> StepOutcome {
        let mut failing = error.node.clone();
        let mut skip_frame = frame_level;
        loop {
            if !skip_frame {
                self.event(TraceKind::ErrorRaised, Some(&failing), error.to_value());
                let frame = self.frames.last().expect("frame");
                let graph = frame.graph.clone();
                let mut chosen = None;
                for (i, h) in frame.handlers.iter().enumerate().rev() {
                    if !h.region.contains(&failing) {
                        continue;
                    }
                    let catch = PortRef::new(h.node.as_str(), "catch");
                    if graph.edge_from(&catch).is_some() {
                        chosen = Some(i);
                        break;
                    }
                }
                if let Some(i) = chosen {
                    let frame = self.frames.last_mut().expect("frame");
                    let handler = frame.handlers[i].clone();
                    frame.handlers.truncate(i);
                    frame.stack.truncate(handler.mark);
                    self.event(
                        TraceKind::ErrorCaught,
                        Some(&handler.node),
                        error.to_value(),
                    );
                    self.emit(&handler.node, vec![("catch".to_string(), error.to_value())]);
                    return StepOutcome::Advanced(error.node.clone());
                }
            }
            skip_frame = false;
            if self.frames.len() == 1 {
                self.status = SessionStatus::Failed(error.clone());
                self.ended_at = Some(now_ms());
                self.event(
                    TraceKind::SessionEnd,
                    None,
                    Value::object([("status", Value::from("failed")), ("error", error.to_value())]),
                );
                return StepOutcome::Error(error);
            }
            let depth = self.frames.len();
            let frame = self.frames.pop().expect("frame");
            let owner = frame.kind.node().expect("nested frame has an owner").to_string();
            self.trace_at(TraceKind::FramePop, Some(&owner), depth, Value::Null);
            failing = owner;
        }
    }

    fn event(&mut self, kind: TraceKind, node: Option<&str>, data: Value) {
        let depth = self.frames.len();
        self.trace_at(kind, node, depth, data);
    }

    fn trace_at(&mut self, kind: TraceKind, node: Option<&str>, depth: usize, data: Value) {
        self.trace.push(TraceEvent {
            seq: self.trace.len() as u64,
            ts: now_ms(),
            kind,
            node: node.map(str::to_string),
            frame_depth: depth,
            data,
        });
    }

    /// Frame variables plus `payload`.
    fn scope(&self, payload: &Value) -> Object {
        let mut env = self.frames.last().expect("frame").env.clone();
        env.insert("payload".into(), payload.clone());
        env
    }
}

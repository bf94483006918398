//! The debug protocol, independent of transport.
//!
//! Each client gets an outbox of NDJSON lines. A command produces exactly
//! one reply, preceded by any events it caused. Events go to every client
//! subscribed to the session.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use aad_core::engine::{EngineError, Runtime, Session, SessionManager, SessionOptions, SessionStatus, StepOutcome};
use aad_core::gateway::{GatewayMode, MimicRule};
use aad_core::model::NodeKind;
use aad_core::topo_format;
use aad_core::trace::TraceKind;
use aad_core::Value;
use serde::Deserialize;
use serde_json::{json, Value as Json};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

pub type ClientId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceMode {
    /// Every command is available.
    Dev,
    /// Only the commands a deployed agent needs.
    Run,
}

impl ServiceMode {
    pub fn name(self) -> &'static str {
        match self {
            ServiceMode::Dev => "dev",
            ServiceMode::Run => "run",
        }
    }
}

pub const COMMANDS: [&str; 14] = [
    "attach",
    "start",
    "set_breakpoint",
    "clear_breakpoint",
    "continue",
    "step_over",
    "step_into",
    "step_out",
    "inspect",
    "provide_input",
    "set_mimic_rule",
    "clear_mimic_rules",
    "get_trace",
    "detach",
];

pub const RUN_MODE_COMMANDS: [&str; 5] = ["attach", "detach", "start", "provide_input", "get_trace"];

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub runtime: Arc<Runtime>,
    pub entry_graph: String,
    pub mode: ServiceMode,
    /// Makes session ids reproducible.
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct Command {
    cmd: String,
    #[serde(default)]
    session: Option<String>,
    #[serde(default)]
    args: Json,
    #[serde(default)]
    req: Option<Json>,
}

#[derive(Debug)]
struct Failure {
    code: String,
    message: String,
}

impl Failure {
    fn new(code: &str, message: impl Into<String>) -> Failure {
        Failure {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::new(e.code(), e.to_string())
    }
}

type Reply = Result<Json, Failure>;

pub struct DebugService {
    manager: SessionManager,
    entry_graph: String,
    mode: ServiceMode,
    clients: Mutex<BTreeMap<ClientId, UnboundedSender<String>>>,
    subscribers: Mutex<BTreeMap<String, BTreeSet<ClientId>>>,
    cursors: Mutex<BTreeMap<String, usize>>,
    next_client: AtomicU64,
}

impl std::fmt::Debug for DebugService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DebugService")
            .field("entry_graph", &self.entry_graph)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

fn reply_line(re: Option<Json>, reply: Reply) -> String {
    let re = re.unwrap_or(Json::Null);
    match reply {
        Ok(result) => json!({"re": re, "ok": true, "result": result}).to_string(),
        Err(f) => json!({"re": re, "ok": false, "error": f.code, "message": f.message}).to_string(),
    }
}

fn status_json(status: &SessionStatus) -> Json {
    status.to_value().to_json()
}

/// Where a session stands after a command.
fn position(session: &Session) -> Json {
    let mut out = json!({
        "status": status_json(session.status()),
        "frame_depth": session.depth(),
    });
    let node = match session.status() {
        SessionStatus::PausedBreakpoint(n) => Some(n.clone()),
        SessionStatus::AwaitingInput { node, .. } => Some(node.clone()),
        _ => None,
    };
    if let Some(node) = node {
        out["node"] = Json::from(node);
    }
    out
}

fn stopped(outcome: &StepOutcome) -> bool {
    !matches!(outcome, StepOutcome::Advanced(_))
}

fn require_steppable(session: &Session) -> Result<(), Failure> {
    match session.status() {
        SessionStatus::Ready | SessionStatus::PausedBreakpoint(_) => {}
        other => {
            return Err(Failure::new(
                "IllegalState",
                format!("session is {}; stepping needs a ready or paused session", other.name()),
            ))
        }
    }
    Ok(())
}

/// Runs one node at the current depth, including any frames it opens.
fn step_over(session: &mut Session) -> Result<(), Failure> {
    require_steppable(session)?;
    let Some((_, depth)) = session.pause_at_next() else {
        return Ok(());
    };
    let mut outcome = session.step()?;
    loop {
        if stopped(&outcome) {
            return Ok(());
        }
        match session.next_node() {
            Some((_, d)) if d > depth => outcome = session.step()?,
            _ => break,
        }
    }
    session.pause_at_next();
    Ok(())
}

/// Enters the subframe of a SubAgent or ArrayLoop node. Returns false
/// when the node opens no frame and was stepped over instead.
fn step_into(session: &mut Session) -> Result<bool, Failure> {
    require_steppable(session)?;
    let Some((node, depth)) = session.pause_at_next() else {
        return Ok(false);
    };
    let opens_frame = session
        .current_graph()
        .node(&node)
        .is_some_and(|n| matches!(n.kind, NodeKind::SubAgent | NodeKind::ArrayLoop));
    if !opens_frame {
        step_over(session)?;
        return Ok(false);
    }
    let outcome = session.step()?;
    if stopped(&outcome) {
        return Ok(false);
    }
    let entered = session.next_node().is_some_and(|(_, d)| d == depth + 1);
    session.pause_at_next();
    Ok(entered)
}

/// Runs until the current frame is left.
fn step_out(session: &mut Session) -> Result<(), Failure> {
    require_steppable(session)?;
    let Some((_, depth)) = session.pause_at_next() else {
        return Ok(());
    };
    let mut outcome = session.step()?;
    loop {
        if stopped(&outcome) {
            return Ok(());
        }
        match session.next_node() {
            Some((_, d)) if d >= depth => outcome = session.step()?,
            _ => break,
        }
    }
    session.pause_at_next();
    Ok(())
}

fn str_arg<'a>(args: &'a Json, key: &str) -> Result<&'a str, Failure> {
    args.get(key)
        .and_then(Json::as_str)
        .ok_or_else(|| Failure::new("bad_request", format!("args.{key} must be a string")))
}

impl DebugService {
    pub fn new(config: ServiceConfig) -> DebugService {
        let mut manager = SessionManager::new(config.runtime);
        if let Some(seed) = config.seed {
            manager = manager.with_seed(seed);
        }
        DebugService {
            manager,
            entry_graph: config.entry_graph,
            mode: config.mode,
            clients: Mutex::new(BTreeMap::new()),
            subscribers: Mutex::new(BTreeMap::new()),
            cursors: Mutex::new(BTreeMap::new()),
            next_client: AtomicU64::new(1),
        }
    }

    pub fn mode(&self) -> ServiceMode {
        self.mode
    }

    pub fn entry_graph(&self) -> &str {
        &self.entry_graph
    }

    pub fn manager(&self) -> &SessionManager {
        &self.manager
    }

    pub fn connect(&self) -> (ClientId, UnboundedReceiver<String>) {
        let id = self.next_client.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = unbounded_channel();
        self.clients.lock().expect("clients lock").insert(id, tx);
        (id, rx)
    }

    pub fn disconnect(&self, client: ClientId) {
        self.clients.lock().expect("clients lock").remove(&client);
        for subs in self.subscribers.lock().expect("subscribers lock").values_mut() {
            subs.remove(&client);
        }
    }

    fn send(&self, client: ClientId, line: String) {
        if let Some(tx) = self.clients.lock().expect("clients lock").get(&client) {
            let _ = tx.send(line);
        }
    }

    fn subscribe(&self, client: ClientId, session: &str) {
        self.subscribers
            .lock()
            .expect("subscribers lock")
            .entry(session.to_string())
            .or_default()
            .insert(client);
    }

    fn broadcast(&self, session: &str, event: &str, data: Json) {
        let line = json!({"event": event, "session": session, "data": data}).to_string();
        let targets: Vec<ClientId> = self
            .subscribers
            .lock()
            .expect("subscribers lock")
            .get(session)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for client in targets {
            self.send(client, line.clone());
        }
    }

    /// Sends trace-derived events not yet delivered and, after an
    /// executing command, one event for where the session stopped.
    fn flush(&self, session: &Session, announce: bool) {
        let id = session.id().to_string();
        let start = {
            let mut cursors = self.cursors.lock().expect("cursors lock");
            let cursor = cursors.entry(id.clone()).or_insert(0);
            let start = *cursor;
            *cursor = session.trace().len();
            start
        };
        for ev in &session.trace()[start.min(session.trace().len())..] {
            let node = ev.node.clone().map(Json::from).unwrap_or(Json::Null);
            match ev.kind {
                TraceKind::NodeEnter => {
                    self.broadcast(&id, "node_entered", json!({"node": node, "frame_depth": ev.frame_depth}))
                }
                TraceKind::NodeExit => self.broadcast(
                    &id,
                    "node_exited",
                    json!({
                        "node": node,
                        "frame_depth": ev.frame_depth,
                        "output": ev.data.get("output").map(Value::to_json).unwrap_or(Json::Null),
                    }),
                ),
                TraceKind::Display => {
                    let mut data = ev.data.to_json();
                    if let Some(obj) = data.as_object_mut() {
                        obj.insert("node".into(), node);
                    }
                    self.broadcast(&id, "display", data)
                }
                _ => {}
            }
        }
        if !announce {
            return;
        }
        match session.status() {
            SessionStatus::PausedBreakpoint(node) => self.broadcast(
                &id,
                "paused",
                json!({"node": node, "frame_depth": session.depth()}),
            ),
            SessionStatus::AwaitingInput { node, prompt } => {
                let mut p = json!({"question": prompt.question});
                if let Some(options) = &prompt.options {
                    p["options"] = json!(options);
                }
                self.broadcast(&id, "awaiting_input", json!({"node": node, "prompt": p}))
            }
            SessionStatus::Finished(result) => {
                self.broadcast(&id, "finished", json!({"result": result.to_json()}))
            }
            SessionStatus::Failed(error) => {
                self.broadcast(&id, "failed", json!({"error": error.to_value().to_json()}))
            }
            SessionStatus::Ready | SessionStatus::Running => {}
        }
    }

    /// Handles one inbound line and queues the reply (and any events) on
    /// the client's outbox. Blocks while the engine runs.
    pub fn handle_line(&self, client: ClientId, line: &str) {
        let command: Command = match serde_json::from_str::<Json>(line) {
            Err(_) => {
                self.send(client, json!({"re": null, "ok": false, "error": "parse"}).to_string());
                return;
            }
            Ok(raw) => {
                let re = raw.get("req").cloned();
                match serde_json::from_value(raw) {
                    Ok(c) => c,
                    Err(e) => {
                        self.send(client, reply_line(re, Err(Failure::new("bad_request", e.to_string()))));
                        return;
                    }
                }
            }
        };
        let reply = self.dispatch(client, &command);
        self.send(client, reply_line(command.req, reply));
    }

    fn dispatch(&self, client: ClientId, c: &Command) -> Reply {
        if !COMMANDS.contains(&c.cmd.as_str()) {
            return Err(Failure::new("unknown_command", format!("unknown command `{}`", c.cmd)));
        }
        if self.mode == ServiceMode::Run && !RUN_MODE_COMMANDS.contains(&c.cmd.as_str()) {
            return Err(Failure::new(
                "forbidden",
                format!("`{}` needs a service started in dev mode", c.cmd),
            ));
        }
        let args = if c.args.is_null() { json!({}) } else { c.args.clone() };
        match c.cmd.as_str() {
            "attach" => self.attach(client, c.session.as_deref()),
            "detach" => {
                let mut subs = self.subscribers.lock().expect("subscribers lock");
                match &c.session {
                    Some(s) => {
                        if let Some(set) = subs.get_mut(s) {
                            set.remove(&client);
                        }
                    }
                    None => subs.values_mut().for_each(|set| {
                        set.remove(&client);
                    }),
                }
                Ok(json!({}))
            }
            "start" => self.start(client, &args),
            "set_mimic_rule" | "clear_mimic_rules" if c.session.is_none() => {
                let gateway = &self.manager.runtime().gateway;
                if c.cmd == "clear_mimic_rules" {
                    gateway.clear_rules();
                } else {
                    gateway.add_rule(parse_rule(&args)?);
                }
                Ok(json!({"scope": "global", "rules": gateway.rules().len()}))
            }
            cmd => {
                let id = c
                    .session
                    .as_deref()
                    .ok_or_else(|| Failure::new("bad_request", format!("`{cmd}` needs a session")))?;
                let shared = self.manager.get(id)?;
                self.subscribe(client, id);
                let mut session = shared.lock().expect("session lock");
                let result = self.session_command(&mut session, cmd, &args);
                self.flush(&session, matches!(cmd, "continue" | "step_over" | "step_into" | "step_out" | "provide_input"));
                result
            }
        }
    }

    fn attach(&self, client: ClientId, session: Option<&str>) -> Reply {
        match session {
            Some(id) => {
                let shared = self.manager.get(id)?;
                self.subscribe(client, id);
                let session = shared.lock().expect("session lock");
                let graph: Json = serde_json::from_str(&topo_format::serialize_unchecked(session.graph()))
                    .expect("canonical graph is JSON");
                let snapshot = serde_json::to_value(session.snapshot()).expect("snapshot serializes");
                Ok(json!({
                    "session": id,
                    "graph": graph,
                    "status": status_json(session.status()),
                    "snapshot": snapshot,
                }))
            }
            None => {
                let mut sessions = Vec::new();
                for id in self.manager.ids() {
                    if let Ok(shared) = self.manager.get(&id) {
                        let s = shared.lock().expect("session lock");
                        sessions.push(json!({"id": id, "graph": s.graph().name(), "status": s.status().name()}));
                    }
                }
                let graphs: Vec<&String> = self.manager.runtime().library.keys().collect();
                Ok(json!({
                    "sessions": sessions,
                    "graphs": graphs,
                    "entry_graph": self.entry_graph,
                    "mode": self.mode.name(),
                }))
            }
        }
    }

    fn start(&self, client: ClientId, args: &Json) -> Reply {
        let name = args.get("graph").and_then(Json::as_str).unwrap_or(&self.entry_graph);
        let graph = self
            .manager
            .runtime()
            .library
            .get(name)
            .ok_or_else(|| Failure::new("UnknownGraph", format!("no graph named `{name}`")))?;
        let input = args.get("input").map(Value::from_json).unwrap_or(Value::Null);
        let mut options = SessionOptions::default();
        if let Some(bps) = args.get("breakpoints").and_then(Json::as_array) {
            if self.mode == ServiceMode::Run && !bps.is_empty() {
                return Err(Failure::new("forbidden", "breakpoints need a service started in dev mode"));
            }
            options.breakpoints = bps.iter().filter_map(Json::as_str).map(str::to_string).collect();
        }
        if let Some(mode) = args.get("mode").and_then(Json::as_str) {
            options.mode = Some(
                mode.parse::<GatewayMode>()
                    .map_err(|e| Failure::new("bad_request", e.to_string()))?,
            );
        }
        options.llm_seed = args.get("seed").and_then(Json::as_u64);
        let run = self.mode == ServiceMode::Run || args.get("run").and_then(Json::as_bool).unwrap_or(false);
        let shared = self.manager.start(graph.as_ref().clone(), input, options)?;
        let mut session = shared.lock().expect("session lock");
        let id = session.id().to_string();
        self.subscribe(client, &id);
        if run {
            session.continue_run()?;
        }
        self.flush(&session, run);
        let mut result = position(&session);
        result["session"] = Json::from(id);
        Ok(result)
    }

    fn session_command(&self, session: &mut Session, cmd: &str, args: &Json) -> Reply {
        match cmd {
            "set_breakpoint" => {
                session.set_breakpoint(str_arg(args, "node")?);
                Ok(json!({"breakpoints": session.breakpoints()}))
            }
            "clear_breakpoint" => {
                let removed = session.clear_breakpoint(str_arg(args, "node")?);
                Ok(json!({"removed": removed, "breakpoints": session.breakpoints()}))
            }
            "continue" => {
                match session.status() {
                    SessionStatus::Ready | SessionStatus::PausedBreakpoint(_) | SessionStatus::Running => {}
                    other => {
                        return Err(Failure::new(
                            "IllegalState",
                            format!("cannot continue a session that is {}", other.name()),
                        ))
                    }
                }
                session.continue_run()?;
                Ok(position(session))
            }
            "step_over" => {
                step_over(session)?;
                Ok(position(session))
            }
            "step_into" => {
                let entered = step_into(session)?;
                let mut result = position(session);
                result["entered"] = Json::from(entered);
                if !entered {
                    result["note"] = Json::from("StepIntoNotApplicable");
                }
                Ok(result)
            }
            "step_out" => {
                step_out(session)?;
                Ok(position(session))
            }
            "inspect" => Ok(serde_json::to_value(session.snapshot()).expect("snapshot serializes")),
            "provide_input" => {
                let value = args
                    .get("value")
                    .map(Value::from_json)
                    .ok_or_else(|| Failure::new("bad_request", "args.value is required"))?;
                session.provide_input(value)?;
                session.continue_run()?;
                Ok(position(session))
            }
            "set_mimic_rule" => {
                session.add_mimic_rule(parse_rule(args)?);
                Ok(json!({"scope": "session", "rules": session.mimic_rules().len()}))
            }
            "clear_mimic_rules" => {
                session.clear_mimic_rules();
                Ok(json!({"scope": "session", "rules": 0}))
            }
            "get_trace" => Ok(serde_json::to_value(session.trace_log()).expect("trace serializes")),
            other => Err(Failure::new("unknown_command", format!("unknown command `{other}`"))),
        }
    }
}

fn parse_rule(args: &Json) -> Result<MimicRule, Failure> {
    let raw = args.get("rule").unwrap_or(args);
    serde_json::from_value(raw.clone()).map_err(|e| Failure::new("bad_request", format!("rule: {e}")))
}

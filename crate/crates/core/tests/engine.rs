use std::collections::BTreeMap;
use std::sync::Arc;

use aad_core::engine::{
    start_session, EngineError, Runtime, SessionManager, SessionOptions, SessionStatus, StepOutcome,
};
use aad_core::gateway::{Gateway, MimicRule};
use aad_core::model::{Node, NodeKind, TopologyGraph};
use aad_core::testkit::{oracle_run, random_input, GraphGen};
use aad_core::trace::{check_trace, TraceKind};
use aad_core::Value;

fn rt() -> Arc<Runtime> {
    Arc::new(Runtime::mock(7))
}

fn linear(name: &str, middle: Node) -> TopologyGraph {
    let id = middle.id.clone();
    TopologyGraph::new(name)
        .with_node(Node::new("start", NodeKind::Start))
        .with_node(middle)
        .with_node(Node::new("end", NodeKind::End))
        .with_edge(("start", "out"), (&id, "in"))
        .with_edge((&id, "out"), ("end", "in"))
}

fn run(graph: TopologyGraph, input: Value) -> Result<Value, EngineError> {
    let mut s = start_session(rt(), graph, input, SessionOptions::default())?;
    s.run_to_completion(|_, _| Value::Null)
}

fn loop_graph() -> TopologyGraph {
    TopologyGraph::new("loop")
        .with_node(Node::new("start", NodeKind::Start))
        .with_node(Node::new("each", NodeKind::ArrayLoop))
        .with_node(Node::new("double", NodeKind::Code).with_config("expr", "item * 2"))
        .with_node(Node::new("end", NodeKind::End))
        .with_edge(("start", "out"), ("each", "in"))
        .with_edge(("each", "body"), ("double", "in"))
        .with_edge(("double", "out"), ("each", "loopback"))
        .with_edge(("each", "done"), ("end", "in"))
}

fn nums(xs: &[i64]) -> Value {
    Value::from(xs.iter().map(|x| Value::from(*x)).collect::<Vec<_>>())
}

#[test]
fn start_session_is_ready_at_start() {
    let g = linear("min", Node::new("c", NodeKind::Connector));
    let mut opts = SessionOptions::default();
    opts.breakpoints.insert("c".into());
    let s = start_session(rt(), g, Value::from(5), opts).unwrap();
    assert_eq!(*s.status(), SessionStatus::Ready);
    let snap = s.snapshot();
    assert_eq!(snap.frames.len(), 1);
    assert_eq!(snap.frames[0].node.as_deref(), Some("start"));
    assert_eq!(snap.frames[0].env, Value::object([("payload", Value::from(5))]));
    assert!(s.breakpoints().contains("c"));
    assert_eq!(s.id().len(), 36);
}

#[test]
fn invalid_graph_is_refused() {
    let g = TopologyGraph::new("bad").with_node(Node::new("end", NodeKind::End));
    let err = start_session(rt(), g, Value::Null, SessionOptions::default()).unwrap_err();
    assert_eq!(err.code(), "InvalidGraph");
}

#[test]
fn prompt_graph_takes_three_steps() {
    let g = linear("hi", Node::new("p", NodeKind::Prompt).with_config("template", "Hi {payload}"));
    let mut s = start_session(rt(), g, Value::from("Bob"), SessionOptions::default()).unwrap();
    assert_eq!(s.step().unwrap(), StepOutcome::Advanced("start".into()));
    assert_eq!(s.step().unwrap(), StepOutcome::Advanced("p".into()));
    assert_eq!(s.step().unwrap(), StepOutcome::Done(Value::from("Hi Bob")));
    assert_eq!(s.step().unwrap_err().code(), "IllegalState");
    let kinds: Vec<TraceKind> = s.trace().iter().map(|e| e.kind).collect();
    assert_eq!(kinds.len(), 8);
    assert_eq!(kinds[0], TraceKind::SessionStart);
    assert_eq!(kinds[7], TraceKind::SessionEnd);
    check_trace(s.trace()).unwrap();
}

#[test]
fn minimal_graph_returns_input() {
    let g = linear("min", Node::new("c", NodeKind::Connector));
    assert_eq!(run(g, Value::from(5)).unwrap(), Value::from(5));
}

#[test]
fn branch_routes_on_first_true_case() {
    let cases = Value::from_json_str(r#"[{"port":"then","cond":"payload > 0"}]"#).unwrap();
    let g = TopologyGraph::new("br")
        .with_node(Node::new("start", NodeKind::Start))
        .with_node(Node::new("b", NodeKind::Branch).with_config("cases", cases))
        .with_node(Node::new("yes", NodeKind::End).with_config("result", "\"then\""))
        .with_node(Node::new("no", NodeKind::End).with_config("result", "\"else\""))
        .with_edge(("start", "out"), ("b", "in"))
        .with_edge(("b", "then"), ("yes", "in"))
        .with_edge(("b", "else"), ("no", "in"));
    assert_eq!(run(g.clone(), Value::from(1)).unwrap(), Value::from("then"));
    assert_eq!(run(g, Value::from(-1)).unwrap(), Value::from("else"));
}

#[test]
fn unwired_branch_route_fails() {
    let cases = Value::from_json_str(r#"[{"port":"then","cond":"payload > 0"}]"#).unwrap();
    let g = TopologyGraph::new("br")
        .with_node(Node::new("start", NodeKind::Start))
        .with_node(Node::new("b", NodeKind::Branch).with_config("cases", cases))
        .with_node(Node::new("end", NodeKind::End))
        .with_edge(("start", "out"), ("b", "in"))
        .with_edge(("b", "then"), ("end", "in"));
    match run(g, Value::from(0)).unwrap_err() {
        EngineError::Failed { error, .. } => assert_eq!((error.kind.as_str(), error.node.as_str()), ("RouteMissing", "b")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn array_loop_matches_oracle() {
    let g = loop_graph();
    let input = nums(&[1, 2, 3]);
    let expected = oracle_run(&g, input.clone(), &BTreeMap::new()).unwrap();
    assert_eq!(run(g, input).unwrap(), expected);
    assert_eq!(expected, nums(&[2, 4, 6]));
}

fn div_graph(wrapped: bool) -> TopologyGraph {
    let g = TopologyGraph::new("div")
        .with_node(Node::new("start", NodeKind::Start))
        .with_node(Node::new("div", NodeKind::Code).with_config("expr", "1 / 0"))
        .with_node(Node::new("end", NodeKind::End));
    if !wrapped {
        return g.with_edge(("start", "out"), ("div", "in")).with_edge(("div", "out"), ("end", "in"));
    }
    g.with_node(Node::new("guard", NodeKind::ErrorHandler))
        .with_node(Node::new("report", NodeKind::Prompt).with_config("template", "err: {payload.kind}"))
        .with_node(Node::new("end2", NodeKind::End))
        .with_edge(("start", "out"), ("guard", "in"))
        .with_edge(("guard", "try"), ("div", "in"))
        .with_edge(("div", "out"), ("end", "in"))
        .with_edge(("guard", "catch"), ("report", "in"))
        .with_edge(("report", "out"), ("end2", "in"))
}

#[test]
fn division_by_zero_fails_the_session() {
    match run(div_graph(false), Value::Null).unwrap_err() {
        EngineError::Failed { error, trace } => {
            assert_eq!(error.kind, "DivByZero");
            assert_eq!(error.node, "div");
            assert_eq!(trace.count(TraceKind::ErrorRaised), 1);
            check_trace(&trace.events).unwrap();
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn error_handler_routes_the_record() {
    let g = div_graph(true);
    let expected = oracle_run(&g, Value::Null, &BTreeMap::new()).unwrap();
    let mut s = start_session(rt(), g, Value::Null, SessionOptions::default()).unwrap();
    let v = s.run_to_completion(|_, _| Value::Null).unwrap();
    assert_eq!(v, expected);
    assert_eq!(v, Value::from("err: DivByZero"));
    let kinds: Vec<TraceKind> = s.trace().iter().map(|e| e.kind).collect();
    let raised = kinds.iter().position(|k| *k == TraceKind::ErrorRaised).unwrap();
    assert_eq!(kinds[raised + 1], TraceKind::ErrorCaught);
    check_trace(s.trace()).unwrap();
}

#[test]
fn errors_in_loop_bodies_unwind_through_the_frame() {
    let g = TopologyGraph::new("le")
        .with_node(Node::new("start", NodeKind::Start))
        .with_node(Node::new("guard", NodeKind::ErrorHandler))
        .with_node(Node::new("each", NodeKind::ArrayLoop))
        .with_node(Node::new("inv", NodeKind::Code).with_config("expr", "1 / item"))
        .with_node(Node::new("end", NodeKind::End))
        .with_node(Node::new("oops", NodeKind::End).with_config("result", "payload.node"))
        .with_edge(("start", "out"), ("guard", "in"))
        .with_edge(("guard", "try"), ("each", "in"))
        .with_edge(("each", "body"), ("inv", "in"))
        .with_edge(("inv", "out"), ("each", "loopback"))
        .with_edge(("each", "done"), ("end", "in"))
        .with_edge(("guard", "catch"), ("oops", "in"));
    let mut s = start_session(rt(), g, nums(&[1, 0]), SessionOptions::default()).unwrap();
    assert_eq!(s.run_to_completion(|_, _| Value::Null).unwrap(), Value::from("inv"));
    let t = s.trace();
    check_trace(t).unwrap();
    let raised: Vec<(Option<&str>, usize)> = t
        .iter()
        .filter(|e| e.kind == TraceKind::ErrorRaised)
        .map(|e| (e.node.as_deref(), e.frame_depth))
        .collect();
    assert_eq!(raised, vec![(Some("inv"), 2), (Some("each"), 1)]);
}

#[test]
fn sub_agents_run_in_their_own_frame() {
    let sub = linear("double", Node::new("d", NodeKind::Code).with_config("expr", "payload * 2"));
    let main = linear("main", Node::new("call", NodeKind::SubAgent).with_config("graph", "double"));
    let runtime = Arc::new(Runtime::mock(1).with_graph(sub));
    let mut s = start_session(runtime, main, Value::from(21), SessionOptions::default()).unwrap();
    s.step().unwrap();
    assert_eq!(s.step().unwrap(), StepOutcome::Advanced("call".into()));
    assert_eq!(s.depth(), 2);
    assert_eq!(s.snapshot().frames[1].node.as_deref(), Some("start"));
    assert_eq!(s.run_to_completion(|_, _| Value::Null).unwrap(), Value::from(42));
    check_trace(s.trace()).unwrap();
}

#[test]
fn breakpoints_pause_before_the_node() {
    let g = linear("bp", Node::new("p", NodeKind::Prompt).with_config("template", "{payload}!"));
    let mut opts = SessionOptions::default();
    opts.breakpoints.insert("p".into());
    let mut s = start_session(rt(), g, Value::from("x"), opts).unwrap();
    assert_eq!(s.continue_run().unwrap(), StepOutcome::Paused("p".into()));
    assert_eq!(*s.status(), SessionStatus::PausedBreakpoint("p".into()));
    assert!(!s.trace().iter().any(|e| e.kind == TraceKind::NodeEnter && e.node.as_deref() == Some("p")));
    assert_eq!(s.step().unwrap(), StepOutcome::Advanced("p".into()));
    assert_eq!(s.continue_run().unwrap(), StepOutcome::Done(Value::from("x!")));
}

#[test]
fn breakpoints_pause_at_every_loop_iteration() {
    let mut opts = SessionOptions::default();
    opts.breakpoints.insert("double".into());
    let mut s = start_session(rt(), loop_graph(), nums(&[10, 20, 30]), opts).unwrap();
    assert_eq!(s.continue_run().unwrap(), StepOutcome::Paused("double".into()));
    assert_eq!(s.continue_run().unwrap(), StepOutcome::Paused("double".into()));
    let top = s.snapshot().frames.pop().unwrap();
    assert_eq!(top.env.get("item"), Some(&Value::from(20)));
    assert_eq!(top.env.get("index"), Some(&Value::from(1)));
}

fn ask_graph() -> TopologyGraph {
    let opts = Value::from(vec![Value::from("a"), Value::from("b")]);
    TopologyGraph::new("ask")
        .with_node(Node::new("start", NodeKind::Start))
        .with_node(Node::new("q", NodeKind::AskText).with_config("question", "Name?"))
        .with_node(Node::new("c", NodeKind::AskChoice).with_config("options", opts))
        .with_node(Node::new("end", NodeKind::End))
        .with_edge(("start", "out"), ("q", "in"))
        .with_edge(("q", "out"), ("c", "in"))
        .with_edge(("c", "out"), ("end", "in"))
}

#[test]
fn interaction_nodes_suspend_for_input() {
    let mut s = start_session(rt(), ask_graph(), Value::Null, SessionOptions::default()).unwrap();
    s.step().unwrap();
    match s.step().unwrap() {
        StepOutcome::NeedsInput { node, prompt } => {
            assert_eq!(node, "q");
            assert_eq!(prompt.question, "Name?");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(s.step().unwrap_err().code(), "IllegalState");
    s.provide_input(Value::from("yes")).unwrap();
    match s.step().unwrap() {
        StepOutcome::NeedsInput { prompt, .. } => assert_eq!(prompt.options.unwrap(), vec!["a", "b"]),
        other => panic!("{other:?}"),
    }
    let err = s.provide_input(Value::from("c")).unwrap_err();
    assert_eq!(err.code(), "InvalidChoice");
    assert!(matches!(s.status(), SessionStatus::AwaitingInput { .. }));
    s.provide_input(Value::from("b")).unwrap();
    assert_eq!(s.step().unwrap(), StepOutcome::Done(Value::from("b")));
    assert_eq!(s.provide_input(Value::from("b")).unwrap_err().code(), "IllegalState");
}

#[test]
fn ask_text_answer_flows_downstream() {
    let g = TopologyGraph::new("t")
        .with_node(Node::new("start", NodeKind::Start))
        .with_node(Node::new("q", NodeKind::AskText))
        .with_node(Node::new("p", NodeKind::Prompt).with_config("template", "got {payload}"))
        .with_node(Node::new("end", NodeKind::End))
        .with_edge(("start", "out"), ("q", "in"))
        .with_edge(("q", "out"), ("p", "in"))
        .with_edge(("p", "out"), ("end", "in"));
    let mut s = start_session(rt(), g, Value::Null, SessionOptions::default()).unwrap();
    let v = s.run_to_completion(|_, _| Value::from("yes")).unwrap();
    assert_eq!(v, Value::from("got yes"));
}

fn llm_graph() -> TopologyGraph {
    linear(
        "llm",
        Node::new("ask", NodeKind::LlmCall)
            .with_config("prompt", "Summarize {payload}")
            .with_config("assign", "answer"),
    )
}

#[test]
fn mock_runs_are_deterministic_apart_from_timestamps() {
    let a = {
        let mut s = start_session(rt(), llm_graph(), Value::from("x"), SessionOptions { id: Some("s".into()), ..Default::default() }).unwrap();
        s.run_to_completion(|_, _| Value::Null).unwrap();
        s.trace_log().without_timestamps().to_json_string()
    };
    let b = {
        let mut s = start_session(rt(), llm_graph(), Value::from("x"), SessionOptions { id: Some("s".into()), ..Default::default() }).unwrap();
        s.run_to_completion(|_, _| Value::Null).unwrap();
        s.trace_log().without_timestamps().to_json_string()
    };
    assert_eq!(a, b);
}

#[test]
fn llm_usage_and_event_order() {
    let mut s = start_session(rt(), llm_graph(), Value::from("x"), SessionOptions::default()).unwrap();
    s.run_to_completion(|_, _| Value::Null).unwrap();
    let usage = s.usage();
    assert_eq!(usage.live_calls, 1);
    assert!(usage.prompt_tokens > 0 && usage.completion_tokens > 0);
    let around: Vec<TraceKind> = s
        .trace()
        .iter()
        .filter(|e| e.node.as_deref() == Some("ask"))
        .map(|e| e.kind)
        .collect();
    assert_eq!(
        around,
        vec![TraceKind::NodeEnter, TraceKind::LlmCall, TraceKind::VarUpdate, TraceKind::NodeExit]
    );
}

#[test]
fn session_mimic_rules_answer_without_provider() {
    let gateway = Gateway::mock(3);
    gateway.set_mode(aad_core::gateway::GatewayMode::MimicFirst);
    let runtime = Arc::new(Runtime::new(Arc::new(gateway)));
    let opts = SessionOptions {
        mimic_rules: vec![MimicRule::for_node("r1", "ask", "canned")],
        ..Default::default()
    };
    let mut s = start_session(runtime, llm_graph(), Value::from("x"), opts).unwrap();
    assert_eq!(s.run_to_completion(|_, _| Value::Null).unwrap(), Value::from("canned"));
    assert_eq!(s.usage().live_calls, 0);
    assert_eq!(s.usage().mimic_calls, 1);
}

#[test]
fn step_count_matches_executed_path() {
    let g = div_graph(true);
    let mut s = start_session(rt(), g, Value::Null, SessionOptions::default()).unwrap();
    let mut advanced = 0;
    loop {
        match s.step().unwrap() {
            StepOutcome::Advanced(_) => advanced += 1,
            StepOutcome::Done(_) => break,
            other => panic!("{other:?}"),
        }
    }
    let entered = s.trace().iter().filter(|e| e.kind == TraceKind::NodeEnter).count();
    assert_eq!(advanced + 1, entered);
}

#[test]
fn seeded_manager_ids_repeat() {
    let ids = |seed| {
        let m = SessionManager::new(rt()).with_seed(seed);
        (0..3)
            .map(|_| {
                let s = m.start(loop_graph(), nums(&[1]), SessionOptions::default()).unwrap();
                let id = s.lock().unwrap().id().to_string();
                id
            })
            .collect::<Vec<_>>()
    };
    let a = ids(9);
    assert_eq!(a, ids(9));
    assert_ne!(a, ids(10));
    assert!(a.iter().all(|id| uuid_like(id)));
}

fn uuid_like(id: &str) -> bool {
    let parts: Vec<&str> = id.split('-').collect();
    parts.iter().map(|p| p.len()).collect::<Vec<_>>() == vec![8, 4, 4, 4, 12]
        && id.chars().all(|c| c == '-' || c.is_ascii_hexdigit())
}

#[test]
fn manager_serves_distinct_sessions_in_parallel() {
    let m = Arc::new(SessionManager::new(rt()));
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let m = m.clone();
            std::thread::spawn(move || {
                let s = m.start(loop_graph(), nums(&[i, i + 1]), SessionOptions::default()).unwrap();
                let mut s = s.lock().unwrap();
                s.run_to_completion(|_, _| Value::Null).unwrap()
            })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let i = i as i64;
        assert_eq!(h.join().unwrap(), nums(&[2 * i, 2 * i + 2]));
    }
    assert_eq!(m.ids().len(), 4);
    assert_eq!(m.usage("nope").unwrap_err().code(), "UnknownSession");
}

#[test]
fn random_graphs_match_the_reference_interpreter() {
    let library = BTreeMap::new();
    let mut failures = 0;
    for seed in 0..300u64 {
        let g = GraphGen::executable(seed, 4 + (seed as usize % 20)).generate("rand");
        let input = random_input(seed);
        let expected = oracle_run(&g, input.clone(), &library);
        let mut s = start_session(rt(), g, input, SessionOptions::default()).unwrap();
        let got = s.run_to_completion(|_, _| Value::Null);
        check_trace(s.trace()).unwrap();
        match (got, expected) {
            (Ok(a), Ok(b)) if a == b => {}
            (Err(EngineError::Failed { error, .. }), Err(e)) if error.kind == e.kind && error.node == e.node => {
                failures += 1
            }
            (a, b) => panic!("seed {seed}: engine {a:?} vs oracle {b:?}"),
        }
    }
    assert!(failures < 300);
}

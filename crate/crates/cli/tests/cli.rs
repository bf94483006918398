use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::{json, Value as Json};

fn aad() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aad"))
}

fn projects() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../projects")
}

fn graph(project: &str, name: &str) -> PathBuf {
    projects().join(project).join("graphs").join(format!("{name}.topo.json"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            if entry.file_name() != ".aad" {
                copy_dir(&entry.path(), &dest);
            }
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}

/// Copy of a demo project with plugin paths made absolute.
fn scratch_project(name: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&projects().join(name), dir.path());
    let path = dir.path().join("project.json");
    let mut config: Json = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    if let Some(paths) = config.get_mut("plugin_paths").and_then(Json::as_array_mut) {
        for p in paths.iter_mut() {
            let abs = projects().join(name).join(p.as_str().unwrap());
            *p = json!(abs.canonicalize().unwrap().to_string_lossy());
        }
    }
    std::fs::write(path, config.to_string()).unwrap();
    dir
}

#[test]
fn validate_ok_and_invalid() {
    let o = run(aad().arg("validate").arg(graph("hello", "hello")));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "ok");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.topo.json");
    let text = std::fs::read_to_string(graph("hello", "hello")).unwrap();
    let mut raw: Json = serde_json::from_str(&text).unwrap();
    raw["edges"] = json!([]);
    std::fs::write(&bad, raw.to_string()).unwrap();
    let o = run(aad().arg("validate").arg(&bad));
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("UnreachableNode"), "{}", stdout(&o));
    let o = run(aad().args(["--json", "validate"]).arg(&bad));
    let report: Json = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["ok"], false);
}

#[test]
fn missing_file_is_an_operational_error() {
    let o = run(aad().args(["validate", "/nonexistent/x.topo.json"]));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: FileNotFound: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn run_hello() {
    let o = run(aad().arg("run").arg(graph("hello", "hello")).args(["--input", "\"Bob\""]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "\"Hi Bob\"");
}

#[test]
fn run_by_graph_name_inside_a_project() {
    let o = run(aad()
        .current_dir(projects().join("branch-loop"))
        .args(["run", "main", "--input", "[1,2,3]"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "\"scaled 3 items: [2,4,6]\"");
}

#[test]
fn run_with_answers_json_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("story.trace.json");
    let o = run(aad()
        .args(["--json", "run"])
        .arg(graph("storywriter-mini", "storywriter"))
        .args(["--input", "\"a lighthouse\"", "--answers", "[\"publish\"]", "--seed", "3", "--mode", "mock"])
        .arg("--trace")
        .arg(&trace));
    assert!(o.status.success(), "{}", stderr(&o));
    let out: Json = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(out["usage"]["live_calls"], 8);
    assert!(out["result"]["story"].as_str().unwrap().matches("\n\n").count() == 5);

    let o = run(aad().args(["trace", "check"]).arg(&trace));
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("ok: "));

    let o = run(aad().args(["mimic", "savings"]).arg(&trace));
    assert!(o.status.success());
    assert!(stdout(&o).contains("live-call reduction: 0.0%"), "{}", stdout(&o));
}

#[test]
fn run_without_answers_needs_input() {
    let o = run(aad().arg("run").arg(graph("storywriter-mini", "storywriter")).args(["--input", "\"x\""]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: NeedsInput: "));
}

#[test]
fn broken_trace_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace.json");
    let o = run(aad().arg("run").arg(graph("hello", "hello")).arg("--trace").arg(&trace));
    assert!(o.status.success());
    let mut log: Json = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    log["events"].as_array_mut().unwrap().remove(2);
    std::fs::write(&trace, log.to_string()).unwrap();
    let o = run(aad().args(["trace", "check"]).arg(&trace));
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("seq"), "{}", stdout(&o));
}

#[test]
fn sync_round_trip_and_conflict() {
    let dir = scratch_project("hello");
    let g = dir.path().join("graphs/hello.topo.json");
    let s = dir.path().join("graphs/hello.agent.aad");

    let o = run(aad().arg("sync").arg(&g));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "in sync");

    // Text edit flows into the graph.
    let text = std::fs::read_to_string(&s).unwrap().replace("Hi {payload}", "Hello {payload}");
    std::fs::write(&s, text).unwrap();
    let o = run(aad().arg("sync").arg(&s));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("text"), "{}", stdout(&o));
    let o = run(aad().arg("run").arg(&g).args(["--input", "\"Bob\""]));
    assert_eq!(stdout(&o).trim(), "\"Hello Bob\"");

    // Both sides change the same key.
    let mut raw: Json = serde_json::from_str(&std::fs::read_to_string(&g).unwrap()).unwrap();
    for node in raw["nodes"].as_array_mut().unwrap() {
        if node["id"] == "greet" {
            node["config"]["template"] = json!("Hey {payload}");
        }
    }
    std::fs::write(&g, serde_json::to_string_pretty(&raw).unwrap()).unwrap();
    let text = std::fs::read_to_string(&s).unwrap().replace("Hello {payload}", "Howdy {payload}");
    std::fs::write(&s, text).unwrap();
    let before = std::fs::read_to_string(&g).unwrap();
    let o = run(aad().arg("sync").arg(&g));
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    let table = stdout(&o);
    assert!(table.starts_with("NODE"), "{table}");
    assert!(table.contains("greet") && table.contains("template"));
    assert_eq!(std::fs::read_to_string(&g).unwrap(), before);
}

#[test]
fn sync_creates_the_missing_side() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("hello.topo.json");
    std::fs::copy(graph("hello", "hello"), &g).unwrap();
    let o = run(aad().arg("sync").arg(&g));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("hello.agent.aad").is_file());
    assert!(dir.path().join(".aad/sync/hello.topo.json").is_file());
}

#[test]
fn plugin_list_and_install() {
    let o = run(aad().args(["plugin", "list", "--project"]).arg(projects().join("web-agent")));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 21);
    assert!(stdout(&o).contains("simweb/extract_table"));

    let dir = scratch_project("hello");
    let simweb = projects().join("../plugins/simweb");
    let o = run(aad().args(["--json", "plugin", "install"]).arg(&simweb).arg("--project").arg(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let out: Json = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(out["components"], 20);
    assert!(dir.path().join("plugins/simweb/site.json").is_file());
    let config: Json =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("project.json")).unwrap()).unwrap();
    assert_eq!(config["plugin_paths"], json!(["plugins/simweb"]));
}

/// Spawned `debug` or `serve`; killed on drop.
struct Service {
    child: Child,
    tcp: String,
}

impl Service {
    fn spawn(cmd: &mut Command) -> Service {
        let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let info: Json = serde_json::from_str(&line).unwrap_or_else(|_| panic!("announce line: {line}"));
        Service {
            child,
            tcp: info["tcp"].as_str().unwrap().to_string(),
        }
    }

    fn client(&self) -> (TcpStream, BufReader<TcpStream>) {
        let stream = TcpStream::connect(&self.tcp).unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        (stream, reader)
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn request(w: &mut TcpStream, r: &mut BufReader<TcpStream>, cmd: Json) -> Json {
    writeln!(w, "{cmd}").unwrap();
    loop {
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        let msg: Json = serde_json::from_str(&line).unwrap();
        if msg.get("re").is_some() {
            return msg;
        }
    }
}

fn free_port() -> u16 {
    // The WebSocket binding takes the next port, so probe both.
    loop {
        let a = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = a.local_addr().unwrap().port();
        if port < u16::MAX && std::net::TcpListener::bind(("127.0.0.1", port + 1)).is_ok() {
            return port;
        }
    }
}

#[test]
fn debug_serves_the_project() {
    let svc = Service::spawn(
        aad()
            .args(["--json", "debug", "--port"])
            .arg(free_port().to_string())
            .arg("--project")
            .arg(projects().join("branch-loop")),
    );
    let (mut w, mut r) = svc.client();
    let reply = request(&mut w, &mut r, json!({"cmd": "attach", "req": 1}));
    assert_eq!(reply["result"]["entry_graph"], "main");
    assert_eq!(reply["result"]["mode"], "dev");
}

#[test]
fn package_then_serve() {
    let src = scratch_project("web-agent");
    let out = tempfile::tempdir().unwrap();
    let bundle = out.path().join("bundle");
    let o = run(aad().args(["package", "--out"]).arg(&bundle).arg("--project").arg(src.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(bundle.join("plugins/simweb/plugin.json").is_file());

    let svc = Service::spawn(aad().args(["--json", "serve"]).arg(&bundle).args(["--port", &free_port().to_string()]));
    assert!(bundle.join("embed.json").is_file());
    let (mut w, mut r) = svc.client();
    let reply = request(&mut w, &mut r, json!({"cmd": "start", "req": 1, "args": {"input": "nav_products"}}));
    assert_eq!(reply["result"]["status"]["result"]["header"], json!(["item", "price", "stock"]), "{reply}");
}

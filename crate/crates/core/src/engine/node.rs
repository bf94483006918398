//! Nodes that run to completion in one go: they read the payload and
//! frame variables and yield an output plus the ports it leaves on.

use crate::external::{run_json, DEFAULT_TIMEOUT_MS};
use crate::gateway::{LlmParams, LlmRequest, Message, Origin, Role};
use crate::model::{Node, NodeKind};
use crate::plugin::InvokeContext;
use crate::scriptlet::{eval_str, render_str};
use crate::trace::TraceKind;
use crate::value::{Object, Value};

use super::{NodeError, Session};

fn script_err(node: &str, e: crate::scriptlet::ScriptError) -> NodeError {
    NodeError::new(e.kind_name(), node, e.to_string())
}

fn template_err(node: &str, e: crate::scriptlet::TemplateError) -> NodeError {
    NodeError::new(e.kind_name(), node, e.to_string())
}

impl Session {
    pub(super) fn eval_config_expr(
        &self,
        node: &Node,
        key: &str,
        default: &str,
        input: &Value,
    ) -> Result<Value, NodeError> {
        let src = node.config_str(key).unwrap_or(default);
        eval_str(src, &self.scope(input)).map_err(|e| script_err(&node.id, e))
    }

    fn render(&self, node: &Node, key: &str, input: &Value) -> Result<Option<String>, NodeError> {
        match node.config_str(key) {
            Some(t) => render_str(t, &self.scope(input))
                .map(Some)
                .map_err(|e| template_err(&node.id, e)),
            None => Ok(None),
        }
    }

    /// Evaluates a node that needs no frame changes or suspension.
    pub(super) fn run_simple(
        &mut self,
        node: &Node,
        input: Value,
    ) -> Result<(Value, Vec<String>), NodeError> {
        let out = |v: Value| Ok((v, vec!["out".to_string()]));
        match &node.kind {
            NodeKind::Start => out(input),
            NodeKind::Connector => {
                let ports = match node.config.get("outputs").and_then(Value::as_array) {
                    Some(names) => names
                        .iter()
                        .filter_map(|n| n.as_str().map(str::to_string))
                        .collect(),
                    None => vec!["out".to_string()],
                };
                Ok((input, ports))
            }
            NodeKind::Prompt => {
                let text = self.render(node, "template", &input)?.unwrap_or_default();
                out(Value::from(text))
            }
            NodeKind::Code => match node.config.get("external") {
                Some(ext) => {
                    let command = ext.get("command").and_then(Value::as_str).unwrap_or_default();
                    let timeout = ext
                        .get("timeout_ms")
                        .and_then(Value::as_f64)
                        .map(|t| t as u64)
                        .unwrap_or(DEFAULT_TIMEOUT_MS);
                    let env = self.frames.last().expect("frame").env.clone();
                    let stdin = Value::object([("env", Value::Object(env)), ("payload", input)]);
                    let cwd = self.runtime.work_dir.clone();
                    run_json(command, cwd.as_deref(), &stdin, timeout)
                        .map_err(|e| NodeError::new("ExternalFailed", &node.id, e.to_string()))
                        .and_then(out)
                }
                None => out(self.eval_config_expr(node, "expr", "payload", &input)?),
            },
            NodeKind::Branch => {
                let env = self.scope(&input);
                if let Some(Value::Array(cases)) = node.config.get("cases") {
                    for case in cases {
                        let port = case.get("port").and_then(Value::as_str).unwrap_or_default();
                        let cond = case.get("cond").and_then(Value::as_str).unwrap_or("false");
                        let hit = eval_str(cond, &env).map_err(|e| script_err(&node.id, e))?;
                        if hit.truthy() {
                            return Ok((input, vec![port.to_string()]));
                        }
                    }
                }
                Ok((input, vec!["else".to_string()]))
            }
            NodeKind::Summary => {
                let items = match &input {
                    Value::Array(items) => items.clone(),
                    other => vec![other.clone()],
                };
                match node.config_str("mode").unwrap_or("collect_array") {
                    "concat_text" => {
                        let sep = node.config_str("separator").unwrap_or("\n");
                        let text: Vec<String> = items.iter().map(Value::to_display_string).collect();
                        out(Value::from(text.join(sep)))
                    }
                    "template" => {
                        let mut env = self.scope(&input);
                        env.insert("inputs".into(), Value::from(items));
                        let t = node.config_str("template").unwrap_or_default();
                        let text = render_str(t, &env).map_err(|e| template_err(&node.id, e))?;
                        out(Value::from(text))
                    }
                    _ => out(Value::from(items)),
                }
            }
            NodeKind::ShowMessage => {
                let text = self
                    .render(node, "text", &input)?
                    .unwrap_or_else(|| input.to_display_string());
                self.event(
                    TraceKind::Display,
                    Some(&node.id),
                    Value::object([("widget", Value::from("message")), ("text", Value::from(text))]),
                );
                out(input)
            }
            NodeKind::ShowChart => {
                let title = node.config_str("title").unwrap_or_default().to_string();
                self.event(
                    TraceKind::Display,
                    Some(&node.id),
                    Value::object([
                        ("widget", Value::from("chart")),
                        ("title", Value::from(title)),
                        ("values", input.clone()),
                    ]),
                );
                out(input)
            }
            NodeKind::LlmCall => out(self.call_llm(node, &input)?),
            NodeKind::Tool => {
                let component = node.config_str("component").unwrap_or_default();
                let (ns, name) = component.split_once('/').unwrap_or((component, ""));
                out(self.invoke(node, ns, name, input)?)
            }
            NodeKind::Extension { namespace, name } => out(self.invoke(node, namespace, name, input)?),
            NodeKind::End
            | NodeKind::ArrayLoop
            | NodeKind::SubAgent
            | NodeKind::ErrorHandler
            | NodeKind::AskText
            | NodeKind::AskChoice => unreachable!("handled by the stepper"),
        }
    }

    fn call_llm(&mut self, node: &Node, input: &Value) -> Result<Value, NodeError> {
        let mut messages = Vec::new();
        if let Some(system) = self.render(node, "system", input)? {
            messages.push(Message::new(Role::System, system));
        }
        let prompt = self
            .render(node, "prompt", input)?
            .unwrap_or_else(|| input.to_display_string());
        messages.push(Message::new(Role::User, prompt));
        let mut params = match node.config.get("params") {
            Some(p) => serde_json::from_value::<LlmParams>(p.to_json())
                .map_err(|e| NodeError::new("InvalidRequest", &node.id, e.to_string()))?,
            None => LlmParams::default(),
        };
        if params.seed.is_none() {
            params.seed = self.llm_seed;
        }
        let call_index = self.call_index;
        self.call_index += 1;
        let request = LlmRequest {
            model: node.config_str("model").unwrap_or("default").to_string(),
            messages,
            params,
            origin: Origin {
                session: self.id.clone(),
                node: node.id.clone(),
                call_index,
            },
        };
        let gateway = self.runtime.gateway.clone();
        let mode = self.mode.unwrap_or_else(|| gateway.mode());
        let response = gateway
            .complete_with_mode(&request, mode, &self.mimic_rules)
            .map_err(|e| NodeError::new(e.code(), &node.id, e.to_string()))?;
        self.usage.add(&response);
        let source = serde_json::to_value(&response.source).unwrap_or_default();
        let usage = serde_json::to_value(response.usage).unwrap_or_default();
        self.event(
            TraceKind::LlmCall,
            Some(&node.id),
            Value::object([
                ("source", Value::from_json(&source)),
                ("usage", Value::from_json(&usage)),
                ("call_index", Value::from(call_index as i64)),
                ("model", Value::from(request.model.as_str())),
                ("fingerprint", Value::from(request.fingerprint())),
            ]),
        );
        Ok(Value::from(response.content))
    }

    fn invoke(&mut self, node: &Node, ns: &str, name: &str, input: Value) -> Result<Value, NodeError> {
        let env = self.scope(&input);
        let mut config: Object = node
            .config
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "component" | "args" | "assign"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if let Some(Value::Object(args)) = node.config.get("args") {
            for (key, src) in args {
                let src = src.as_str().unwrap_or("null");
                let v = eval_str(src, &env).map_err(|e| script_err(&node.id, e))?;
                config.insert(key.clone(), v);
            }
        }
        let plugins = self.runtime.plugins.clone();
        let plugins = plugins.read().expect("plugin lock");
        let scratch = self.scratch.entry(ns.to_string()).or_insert(Value::Null);
        let mut ctx = InvokeContext {
            session: &self.id,
            node: &node.id,
            scratch,
        };
        plugins
            .invoke_component(ns, name, &config, &input, &mut ctx)
            .map_err(|e| NodeError::new(e.code(), &node.id, e.to_string()))
    }
}

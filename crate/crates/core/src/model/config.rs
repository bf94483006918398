//! Per-kind config schema: which keys a node kind understands and what
//! shape their values take.

use super::kind::NodeKind;
use crate::scriptlet::{parse, Template};
use crate::value::{Object, Value};

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

fn string<'a>(value: &'a Value, what: &str) -> Result<&'a str, String> {
    value
        .as_str()
        .ok_or_else(|| format!("{what} must be a string, found {}", value.type_name()))
}

fn scriptlet(value: &Value, what: &str) -> Result<(), String> {
    let src = string(value, what)?;
    parse(src).map(|_| ()).map_err(|e| format!("{what}: {e}"))
}

fn template(value: &Value, what: &str) -> Result<(), String> {
    let src = string(value, what)?;
    Template::parse(src).map(|_| ()).map_err(|e| format!("{what}: {e}"))
}

fn string_list(value: &Value, what: &str) -> Result<Vec<String>, String> {
    let items = value
        .as_array()
        .ok_or_else(|| format!("{what} must be an array of strings"))?;
    items
        .iter()
        .map(|v| string(v, what).map(str::to_string))
        .collect()
}

/// Type-checks one config entry against the node kind. Unknown keys are
/// accepted and ignored by the engine.
pub fn check_config_value(kind: &NodeKind, key: &str, value: &Value) -> Result<(), String> {
    if key == "assign" {
        let name = string(value, "assign")?;
        return if is_identifier(name) {
            Ok(())
        } else {
            Err(format!("assign target `{name}` is not an identifier"))
        };
    }
    match (kind, key) {
        (NodeKind::End, "result") | (NodeKind::Code, "expr") => scriptlet(value, key),
        (NodeKind::Prompt, "template")
        | (NodeKind::LlmCall, "system" | "prompt")
        | (NodeKind::AskText | NodeKind::AskChoice, "question")
        | (NodeKind::ShowMessage, "text")
        | (NodeKind::Summary, "template") => template(value, key),
        (NodeKind::LlmCall, "model")
        | (NodeKind::SubAgent, "graph")
        | (NodeKind::ShowChart, "title")
        | (NodeKind::Summary, "separator") => string(value, key).map(|_| ()),
        (NodeKind::LlmCall, "params") => match value {
            Value::Object(_) => Ok(()),
            other => Err(format!("params must be an object, found {}", other.type_name())),
        },
        (NodeKind::Code, "external") => {
            let command = value
                .get("command")
                .ok_or("external needs a `command` string")?;
            string(command, "external.command")?;
            match value.get("timeout_ms") {
                None => Ok(()),
                Some(Value::Number(n)) if *n >= 0.0 => Ok(()),
                Some(_) => Err("external.timeout_ms must be a non-negative number".into()),
            }
        }
        (NodeKind::Tool, "component") => {
            let c = string(value, key)?;
            match c.split_once('/') {
                Some((ns, name)) if !ns.is_empty() && !name.is_empty() => Ok(()),
                _ => Err(format!("component `{c}` must look like namespace/name")),
            }
        }
        (NodeKind::Tool, "args") => {
            let args = value
                .as_object()
                .ok_or("args must be an object of scriptlets")?;
            for (name, src) in args {
                scriptlet(src, &format!("args.{name}"))?;
            }
            Ok(())
        }
        (NodeKind::Branch, "cases") => {
            let cases = value.as_array().ok_or("cases must be an array")?;
            for (i, case) in cases.iter().enumerate() {
                let port = case
                    .get("port")
                    .ok_or_else(|| format!("cases[{i}] needs a `port`"))?;
                let port = string(port, "case port")?;
                if !is_identifier(port) || port == "else" {
                    return Err(format!("cases[{i}] port `{port}` is not usable"));
                }
                let cond = case
                    .get("cond")
                    .ok_or_else(|| format!("cases[{i}] needs a `cond`"))?;
                scriptlet(cond, &format!("cases[{i}].cond"))?;
            }
            Ok(())
        }
        (NodeKind::Summary, "mode") => match string(value, key)? {
            "concat_text" | "collect_array" | "template" => Ok(()),
            other => Err(format!("unknown summary mode `{other}`")),
        },
        (NodeKind::AskChoice, "options") => {
            let opts = string_list(value, "options")?;
            if opts.is_empty() {
                Err("options must not be empty".into())
            } else {
                Ok(())
            }
        }
        (NodeKind::Connector, "outputs") => {
            let outs = string_list(value, "outputs")?;
            if outs.is_empty() {
                return Err("outputs must not be empty".into());
            }
            for (i, o) in outs.iter().enumerate() {
                if !is_identifier(o) || outs[..i].contains(o) {
                    return Err(format!("output port `{o}` is invalid or repeated"));
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// All problems with a node's config, including missing required keys.
pub fn check_config(kind: &NodeKind, config: &Object) -> Vec<String> {
    let mut problems: Vec<String> = config
        .iter()
        .filter_map(|(k, v)| check_config_value(kind, k, v).err())
        .collect();
    let required: &[&str] = match kind {
        NodeKind::Prompt => &["template"],
        NodeKind::LlmCall => &["prompt"],
        NodeKind::SubAgent => &["graph"],
        NodeKind::Tool => &["component"],
        NodeKind::AskChoice => &["options"],
        _ => &[],
    };
    for key in required {
        if !config.contains_key(*key) {
            problems.push(format!("missing required config `{key}`"));
        }
    }
    if *kind == NodeKind::Code && !config.contains_key("expr") && !config.contains_key("external") {
        problems.push("Code needs `expr` or `external`".into());
    }
    if *kind == NodeKind::Summary
        && config.get("mode").and_then(Value::as_str) == Some("template")
        && !config.contains_key("template")
    {
        problems.push("template mode needs `template`".into());
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(json: &str) -> Value {
        Value::from_json_str(json).unwrap()
    }

    #[test]
    fn scriptlet_keys_must_parse() {
        assert!(check_config_value(&NodeKind::Code, "expr", &v(r#""1 +""#)).is_err());
        assert!(check_config_value(&NodeKind::Code, "expr", &v(r#""item * 2""#)).is_ok());
        assert!(check_config_value(&NodeKind::Code, "expr", &v("3")).is_err());
    }

    #[test]
    fn branch_cases_shape() {
        let ok = v(r#"[{"port":"then","cond":"payload > 0"}]"#);
        assert!(check_config_value(&NodeKind::Branch, "cases", &ok).is_ok());
        let bad = v(r#"[{"port":"else","cond":"true"}]"#);
        assert!(check_config_value(&NodeKind::Branch, "cases", &bad).is_err());
        let missing = v(r#"[{"port":"x"}]"#);
        assert!(check_config_value(&NodeKind::Branch, "cases", &missing).is_err());
    }

    #[test]
    fn required_keys() {
        assert_eq!(check_config(&NodeKind::Prompt, &Object::new()).len(), 1);
        assert_eq!(check_config(&NodeKind::Code, &Object::new()).len(), 1);
        assert!(check_config(&NodeKind::Connector, &Object::new()).is_empty());
    }

    #[test]
    fn unknown_keys_are_accepted() {
        assert!(check_config_value(&NodeKind::Prompt, "note", &v("[1,2]")).is_ok());
    }
}

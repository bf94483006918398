use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GatewayError, LlmRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CallIndexMatch {
    Exact(u64),
    Range {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<u64>,
    },
}

impl CallIndexMatch {
    pub fn matches(&self, index: u64) -> bool {
        match *self {
            CallIndexMatch::Exact(i) => i == index,
            CallIndexMatch::Range { min, max } => {
                min.is_none_or(|lo| index >= lo) && max.is_none_or(|hi| index <= hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleMatch {
    /// Glob over node ids; absent means any node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_pattern: Option<String>,
    /// Substring of the last user message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_index: Option<CallIndexMatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MimicRule {
    pub id: String,
    #[serde(rename = "match", default)]
    pub matcher: RuleMatch,
    pub response: String,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

impl MimicRule {
    pub fn contains(id: &str, needle: &str, response: &str) -> MimicRule {
        MimicRule {
            id: id.into(),
            matcher: RuleMatch {
                contains: Some(needle.into()),
                ..RuleMatch::default()
            },
            response: response.into(),
            enabled: true,
        }
    }

    pub fn for_node(id: &str, pattern: &str, response: &str) -> MimicRule {
        MimicRule {
            id: id.into(),
            matcher: RuleMatch {
                node_pattern: Some(pattern.into()),
                ..RuleMatch::default()
            },
            response: response.into(),
            enabled: true,
        }
    }

    /// A rule matches iff it is enabled and every present matcher matches.
    pub fn matches(&self, request: &LlmRequest) -> bool {
        if !self.enabled {
            return false;
        }
        let m = &self.matcher;
        if let Some(pattern) = &m.node_pattern {
            let ok = glob::Pattern::new(pattern)
                .map(|p| p.matches(&request.origin.node))
                .unwrap_or(false);
            if !ok {
                return false;
            }
        }
        if let Some(needle) = &m.contains {
            if !request.last_user_message().is_some_and(|t| t.contains(needle.as_str())) {
                return false;
            }
        }
        if let Some(ci) = &m.call_index {
            if !ci.matches(request.origin.call_index) {
                return false;
            }
        }
        true
    }
}

/// Reads a `.mimic.json` profile: a JSON list of rules.
pub fn load_profile(path: &Path) -> Result<Vec<MimicRule>, GatewayError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{LlmParams, Message, Origin, Role};

    fn req(node: &str, index: u64, text: &str) -> LlmRequest {
        LlmRequest {
            model: "m".into(),
            messages: vec![Message::new(Role::User, text)],
            params: LlmParams::default(),
            origin: Origin {
                session: "s".into(),
                node: node.into(),
                call_index: index,
            },
        }
    }

    #[test]
    fn all_present_matchers_must_match() {
        let rule: MimicRule = serde_json::from_str(
            r#"{"id":"r","match":{"node_pattern":"para*","contains":"intro","call_index":{"min":1,"max":3}},"response":"ok"}"#,
        )
        .unwrap();
        assert!(rule.matches(&req("para_1", 2, "the intro")));
        assert!(!rule.matches(&req("outline", 2, "the intro")));
        assert!(!rule.matches(&req("para_1", 0, "the intro")));
        assert!(!rule.matches(&req("para_1", 2, "the end")));
        let exact: MimicRule =
            serde_json::from_str(r#"{"id":"e","match":{"call_index":4},"response":"x"}"#).unwrap();
        assert!(exact.matches(&req("a", 4, "")));
        assert!(!exact.matches(&req("a", 5, "")));
    }

    #[test]
    fn disabled_rules_never_match() {
        let mut rule = MimicRule::for_node("r", "*", "x");
        assert!(rule.matches(&req("any", 0, "")));
        rule.enabled = false;
        assert!(!rule.matches(&req("any", 0, "")));
    }
}

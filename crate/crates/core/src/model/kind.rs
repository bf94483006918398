use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Component kinds across the chain, flow-control, interaction and plugin
/// dimensions. Plugin kinds print as `namespace/name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    LlmCall,
    Prompt,
    Code,
    SubAgent,
    Tool,
    Start,
    End,
    Connector,
    Branch,
    ArrayLoop,
    Summary,
    ErrorHandler,
    AskText,
    AskChoice,
    ShowMessage,
    ShowChart,
    Extension { namespace: String, name: String },
}

impl NodeKind {
    pub const BUILTIN: [NodeKind; 16] = [
        NodeKind::LlmCall,
        NodeKind::Prompt,
        NodeKind::Code,
        NodeKind::SubAgent,
        NodeKind::Tool,
        NodeKind::Start,
        NodeKind::End,
        NodeKind::Connector,
        NodeKind::Branch,
        NodeKind::ArrayLoop,
        NodeKind::Summary,
        NodeKind::ErrorHandler,
        NodeKind::AskText,
        NodeKind::AskChoice,
        NodeKind::ShowMessage,
        NodeKind::ShowChart,
    ];

    pub fn extension(namespace: impl Into<String>, name: impl Into<String>) -> NodeKind {
        NodeKind::Extension {
            namespace: namespace.into(),
            name: name.into(),
        }
    }

    pub fn is_interaction(&self) -> bool {
        matches!(
            self,
            NodeKind::AskText | NodeKind::AskChoice | NodeKind::ShowMessage | NodeKind::ShowChart
        )
    }

    /// Nodes that run a nested frame when executed.
    pub fn has_subframe(&self) -> bool {
        matches!(self, NodeKind::SubAgent | NodeKind::ArrayLoop)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::LlmCall => "LlmCall",
            NodeKind::Prompt => "Prompt",
            NodeKind::Code => "Code",
            NodeKind::SubAgent => "SubAgent",
            NodeKind::Tool => "Tool",
            NodeKind::Start => "Start",
            NodeKind::End => "End",
            NodeKind::Connector => "Connector",
            NodeKind::Branch => "Branch",
            NodeKind::ArrayLoop => "ArrayLoop",
            NodeKind::Summary => "Summary",
            NodeKind::ErrorHandler => "ErrorHandler",
            NodeKind::AskText => "AskText",
            NodeKind::AskChoice => "AskChoice",
            NodeKind::ShowMessage => "ShowMessage",
            NodeKind::ShowChart => "ShowChart",
            NodeKind::Extension { namespace, name } => return write!(f, "{namespace}/{name}"),
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown node kind `{0}`")]
pub struct UnknownKind(pub String);

impl FromStr for NodeKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((ns, name)) = s.split_once('/') {
            let ok = |p: &str| {
                !p.is_empty() && p.chars().all(|c| c == '_' || c.is_ascii_alphanumeric())
            };
            if ok(ns) && ok(name) {
                return Ok(NodeKind::extension(ns, name));
            }
            return Err(UnknownKind(s.to_string()));
        }
        NodeKind::BUILTIN
            .iter()
            .find(|k| k.to_string() == s)
            .cloned()
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}

impl Serialize for NodeKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_roundtrip_through_text() {
        for k in NodeKind::BUILTIN {
            assert_eq!(k.to_string().parse::<NodeKind>().unwrap(), k);
        }
        let ext: NodeKind = "simweb/open_page".parse().unwrap();
        assert_eq!(ext, NodeKind::extension("simweb", "open_page"));
        assert_eq!(ext.to_string(), "simweb/open_page");
        assert!("Bogus".parse::<NodeKind>().is_err());
        assert!("a/b/c".parse::<NodeKind>().is_err());
    }
}

//! Session trace events, the exported `.trace.json` log, and the
//! well-formedness checker.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::Value;

pub const EXTENSION: &str = ".trace.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    SessionStart,
    NodeEnter,
    NodeExit,
    VarUpdate,
    LlmCall,
    Display,
    BreakpointHit,
    FramePush,
    FramePop,
    ErrorRaised,
    ErrorCaught,
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub ts: u64,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    pub frame_depth: usize,
    pub data: Value,
}

/// The exported log: `{session, graph_name, events}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    pub session: String,
    pub graph_name: String,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace is not valid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl TraceLog {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<TraceLog, TraceError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &std::path::Path) -> Result<TraceLog, TraceError> {
        TraceLog::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), TraceError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Same log with every timestamp zeroed.
    pub fn without_timestamps(&self) -> TraceLog {
        let mut log = self.clone();
        for e in &mut log.events {
            e.ts = 0;
        }
        log
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceViolation {
    pub seq: u64,
    pub message: String,
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seq {}: {}", self.seq, self.message)
    }
}

#[derive(Debug, PartialEq)]
enum Open {
    Node(String, usize),
    Frame(usize),
}

/// Checks dense sequence numbers, enter/exit balance per depth and
/// push/pop balance. Logs without a SessionEnd (paused or waiting
/// sessions) may leave entries open.
pub fn check_trace(events: &[TraceEvent]) -> Result<(), Vec<TraceViolation>> {
    let mut problems = Vec::new();
    let mut open: Vec<Open> = Vec::new();
    let mut depth = 1usize;
    let mut ended = false;
    let mut bad = |seq: u64, message: String| problems.push(TraceViolation { seq, message });

    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            bad(e.seq, format!("expected seq {i}"));
        }
        if ended {
            bad(e.seq, "event after SessionEnd".into());
        }
        match e.kind {
            TraceKind::SessionStart => {
                if i != 0 {
                    bad(e.seq, "SessionStart is not first".into());
                }
            }
            TraceKind::NodeEnter => {
                let Some(node) = &e.node else {
                    bad(e.seq, "NodeEnter without node".into());
                    continue;
                };
                if e.frame_depth != depth {
                    bad(e.seq, format!("NodeEnter at depth {} inside depth {depth}", e.frame_depth));
                }
                open.push(Open::Node(node.clone(), e.frame_depth));
            }
            TraceKind::NodeExit | TraceKind::ErrorRaised => {
                let expected = e.node.clone().map(|n| Open::Node(n, e.frame_depth));
                match (open.last(), expected) {
                    (Some(top), Some(want)) if *top == want => {
                        open.pop();
                    }
                    (top, _) => bad(
                        e.seq,
                        format!("{:?} of {:?} does not close {top:?}", e.kind, e.node),
                    ),
                }
            }
            TraceKind::FramePush => {
                if e.frame_depth != depth + 1 {
                    bad(e.seq, format!("FramePush to depth {} from {depth}", e.frame_depth));
                }
                depth = e.frame_depth;
                open.push(Open::Frame(e.frame_depth));
            }
            TraceKind::FramePop => {
                if open.last() == Some(&Open::Frame(e.frame_depth)) {
                    open.pop();
                    depth = e.frame_depth.saturating_sub(1).max(1);
                } else {
                    bad(e.seq, format!("FramePop of depth {} does not close {:?}", e.frame_depth, open.last()));
                }
            }
            TraceKind::SessionEnd => {
                ended = true;
                if !open.is_empty() {
                    bad(e.seq, format!("session ended with open entries {open:?}"));
                }
            }
            TraceKind::VarUpdate
            | TraceKind::LlmCall
            | TraceKind::Display
            | TraceKind::BreakpointHit
            | TraceKind::ErrorCaught => {}
        }
    }
    if let Some(first) = events.first() {
        if first.kind != TraceKind::SessionStart {
            problems.push(TraceViolation {
                seq: first.seq,
                message: "log does not begin with SessionStart".into(),
            });
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(seq: u64, kind: TraceKind, node: Option<&str>, depth: usize) -> TraceEvent {
        TraceEvent {
            seq,
            ts: 1000 + seq,
            kind,
            node: node.map(str::to_string),
            frame_depth: depth,
            data: Value::Null,
        }
    }

    #[test]
    fn balanced_trace_passes() {
        use TraceKind::*;
        let events = vec![
            ev(0, SessionStart, None, 1),
            ev(1, NodeEnter, Some("loop"), 1),
            ev(2, FramePush, Some("loop"), 2),
            ev(3, NodeEnter, Some("a"), 2),
            ev(4, NodeExit, Some("a"), 2),
            ev(5, FramePop, Some("loop"), 2),
            ev(6, NodeExit, Some("loop"), 1),
            ev(7, SessionEnd, None, 1),
        ];
        assert_eq!(check_trace(&events), Ok(()));
    }

    #[test]
    fn gaps_and_imbalance_fail() {
        use TraceKind::*;
        let gap = vec![ev(0, SessionStart, None, 1), ev(2, SessionEnd, None, 1)];
        assert!(check_trace(&gap).is_err());
        let unclosed = vec![
            ev(0, SessionStart, None, 1),
            ev(1, NodeEnter, Some("a"), 1),
            ev(2, SessionEnd, None, 1),
        ];
        assert!(check_trace(&unclosed).is_err());
        let crossed = vec![
            ev(0, SessionStart, None, 1),
            ev(1, NodeEnter, Some("a"), 1),
            ev(2, FramePush, Some("a"), 2),
            ev(3, NodeExit, Some("a"), 1),
        ];
        assert!(check_trace(&crossed).is_err());
    }

    #[test]
    fn open_trace_without_end_is_accepted() {
        use TraceKind::*;
        let events = vec![ev(0, SessionStart, None, 1), ev(1, NodeEnter, Some("ask"), 1)];
        assert_eq!(check_trace(&events), Ok(()));
    }

    #[test]
    fn strip_ts_and_roundtrip() {
        let log = TraceLog {
            session: "s".into(),
            graph_name: "g".into(),
            events: vec![ev(0, TraceKind::SessionStart, None, 1)],
        };
        let back = TraceLog::from_json_str(&log.to_json_string()).unwrap();
        assert_eq!(back, log);
        assert_eq!(log.without_timestamps().events[0].ts, 0);
    }
}

//! Usage and savings computed from exported traces.

use serde::{Deserialize, Serialize};

use super::{LlmResponse, ResponseSource, TokenUsage, UsageTotals};
use crate::trace::{TraceEvent, TraceKind};

/// Rebuilds usage totals from the `LlmCall` events of a trace. Events
/// whose data does not parse are counted as live with zero tokens.
pub fn usage_from_trace(events: &[TraceEvent]) -> UsageTotals {
    let mut totals = UsageTotals::default();
    for ev in events.iter().filter(|e| e.kind == TraceKind::LlmCall) {
        let data = ev.data.to_json();
        let source: ResponseSource =
            serde_json::from_value(data["source"].clone()).unwrap_or(ResponseSource::Live);
        let usage: TokenUsage = serde_json::from_value(data["usage"].clone()).unwrap_or_default();
        totals.add(&LlmResponse {
            content: String::new(),
            usage,
            source,
        });
    }
    totals
}

/// Live tokens and live calls of a treatment compared with a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub baseline: UsageTotals,
    pub treatment: UsageTotals,
    /// `1 - treatment live tokens / baseline live tokens`.
    pub token_reduction: f64,
    /// `1 - treatment live calls / baseline live calls`.
    pub call_reduction: f64,
}

fn reduction(baseline: u64, treatment: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        1.0 - treatment as f64 / baseline as f64
    }
}

impl Savings {
    pub fn against(baseline: UsageTotals, treatment: UsageTotals) -> Savings {
        Savings {
            baseline,
            treatment,
            token_reduction: reduction(baseline.live_tokens(), treatment.live_tokens()),
            call_reduction: reduction(baseline.live_calls, treatment.live_calls),
        }
    }

    /// Baseline where every mimic or replay answer had gone live instead.
    pub fn counterfactual(treatment: UsageTotals) -> Savings {
        let baseline = UsageTotals {
            live_calls: treatment.live_calls + treatment.mimic_calls,
            mimic_calls: 0,
            prompt_tokens: treatment.prompt_tokens,
            completion_tokens: treatment.completion_tokens + treatment.saved_tokens,
            saved_tokens: 0,
        };
        Savings::against(baseline, treatment)
    }
}

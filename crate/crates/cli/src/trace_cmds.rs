//! `trace check` and `mimic savings`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aad_core::gateway::{usage_from_trace, Savings, UsageTotals};
use aad_core::trace::{check_trace, TraceLog};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{print_json, print_table};

pub fn check(file: &Path, json: bool) -> CliResult<ExitCode> {
    let log = TraceLog::read(file)?;
    let violations = check_trace(&log.events).err().unwrap_or_default();
    if json {
        let list: Vec<_> = violations
            .iter()
            .map(|v| json!({"seq": v.seq, "message": v.message}))
            .collect();
        print_json(&json!({"ok": violations.is_empty(), "events": log.events.len(), "violations": list}));
    } else if violations.is_empty() {
        println!("ok: {} events", log.events.len());
    } else {
        for v in &violations {
            println!("{v}");
        }
    }
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn totals(files: &[PathBuf]) -> CliResult<UsageTotals> {
    let mut sum = UsageTotals::default();
    for file in files {
        sum.merge(&usage_from_trace(&TraceLog::read(file)?.events));
    }
    Ok(sum)
}

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

pub fn savings(traces: &[PathBuf], baseline: &[PathBuf], json: bool) -> CliResult<ExitCode> {
    if traces.is_empty() {
        return Err(CliError::new("BadArgument", "no traces given"));
    }
    let treatment = totals(traces)?;
    let savings = if baseline.is_empty() {
        Savings::counterfactual(treatment)
    } else {
        Savings::against(totals(baseline)?, treatment)
    };
    if json {
        print_json(&savings);
        return Ok(ExitCode::SUCCESS);
    }
    let row = |name: &str, u: &UsageTotals| {
        vec![
            name.to_string(),
            u.live_calls.to_string(),
            u.mimic_calls.to_string(),
            u.live_tokens().to_string(),
            u.saved_tokens.to_string(),
        ]
    };
    print_table(
        &["RUNS", "LIVE_CALLS", "MIMIC_CALLS", "LIVE_TOKENS", "SAVED_TOKENS"],
        &[row("baseline", &savings.baseline), row("treatment", &savings.treatment)],
    );
    println!("token reduction: {}", pct(savings.token_reduction));
    println!("live-call reduction: {}", pct(savings.call_reduction));
    Ok(ExitCode::SUCCESS)
}

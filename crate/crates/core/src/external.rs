//! External-process calls: JSON on stdin, one JSON value on stdout.

use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::value::Value;

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExternalError {
    #[error("could not start `{command}`: {message}")]
    Spawn { command: String, message: String },
    #[error("`{command}` exited with status {status}: {stderr}")]
    Exit {
        command: String,
        status: i32,
        stderr: String,
    },
    #[error("`{command}` timed out after {timeout_ms} ms")]
    Timeout { command: String, timeout_ms: u64 },
    #[error("`{command}` printed invalid JSON: {message}")]
    BadOutput { command: String, message: String },
}

/// Runs `command` through `sh -c`, feeding `stdin` and parsing stdout.
pub fn run_json(
    command: &str,
    cwd: Option<&Path>,
    stdin: &Value,
    timeout_ms: u64,
) -> Result<Value, ExternalError> {
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(dir) = cwd {
        cmd.current_dir(dir);
    }
    let mut child = cmd.spawn().map_err(|e| ExternalError::Spawn {
        command: command.into(),
        message: e.to_string(),
    })?;

    let input = stdin.to_canonical_json();
    let mut pipe = child.stdin.take().expect("stdin piped");
    let writer = std::thread::spawn(move || {
        let _ = pipe.write_all(input.as_bytes());
    });
    let mut out_pipe = child.stdout.take().expect("stdout piped");
    let reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = out_pipe.read_to_string(&mut buf);
        buf
    });
    let mut err_pipe = child.stderr.take().expect("stderr piped");
    let err_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = err_pipe.read_to_string(&mut buf);
        buf
    });

    let deadline = Instant::now() + Duration::from_millis(timeout_ms);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ExternalError::Timeout {
                    command: command.into(),
                    timeout_ms,
                });
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                return Err(ExternalError::Spawn {
                    command: command.into(),
                    message: e.to_string(),
                })
            }
        }
    };
    let _ = writer.join();
    let stdout = reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(ExternalError::Exit {
            command: command.into(),
            status: status.code().unwrap_or(-1),
            stderr: stderr.trim().chars().take(200).collect(),
        });
    }
    Value::from_json_str(stdout.trim()).map_err(|e| ExternalError::BadOutput {
        command: command.into(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echoes_payload_through_a_process() {
        let input = Value::object([("payload", Value::from(3))]);
        let out = run_json("cat", None, &input, 5_000).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn failures_are_classified() {
        let v = Value::Null;
        assert!(matches!(run_json("exit 3", None, &v, 5_000), Err(ExternalError::Exit { status: 3, .. })));
        assert!(matches!(run_json("sleep 5", None, &v, 50), Err(ExternalError::Timeout { .. })));
        assert!(matches!(run_json("echo nope", None, &v, 5_000), Err(ExternalError::BadOutput { .. })));
    }
}

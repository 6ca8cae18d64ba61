//! Execution of rewritten programs.
//!
//! Programs run in a separate runner process that reads one request line from
//! stdin and writes one reply line to stdout:
//!
//! ```text
//! -> {"program": "...", "output_var": "var_out", "timeout_ms": 5000}
//! <- {"status": "ok", "columns": [["name", ["cell", ...]], ...]}
//! <- {"status": "runtime-error", "error": "ZeroDivisionError: division by zero"}
//! ```
//!
//! The bridge enforces the wall-clock limit itself: a runner that has not
//! replied within `timeout_ms` plus a grace period is killed.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tempfile::TempDir;

use crate::table::Table;

pub const ENV_RUNNER: &str = "TABPROMPT_RUNNER";
pub const DEFAULT_RUNNER: &str = "tabprompt-runner";
pub const DEFAULT_GRACE: Duration = Duration::from_millis(250);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecStatus {
    Ok,
    RuntimeError,
    Timeout,
    ProtocolError,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::RuntimeError => "runtime-error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::ProtocolError => "protocol-error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutput {
    pub status: ExecStatus,
    pub value: Option<Table>,
    pub error_message: Option<String>,
    pub duration_ms: u64,
}

impl ExecOutput {
    pub fn ok(value: Table, duration_ms: u64) -> Self {
        ExecOutput {
            status: ExecStatus::Ok,
            value: Some(value),
            error_message: None,
            duration_ms,
        }
    }

    pub fn failure(status: ExecStatus, message: impl Into<String>, duration_ms: u64) -> Self {
        debug_assert!(status != ExecStatus::Ok);
        ExecOutput {
            status,
            value: None,
            error_message: Some(message.into()),
            duration_ms,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

/// Runs a complete program and returns the table bound to `output_var`.
pub trait Executor: Send + Sync {
    fn execute(&self, program: &str, output_var: &str, timeout_ms: u64) -> ExecOutput;
}

/// Request line sent to the runner. Field order is part of the wire format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRequest {
    pub program: String,
    pub output_var: String,
    pub timeout_ms: u64,
}

impl RunRequest {
    /// One JSON line, newline-terminated.
    pub fn encode(&self) -> String {
        let mut line = serde_json::to_string(self).expect("request serialization");
        line.push('\n');
        line
    }
}

/// Reply line written by the runner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReply {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<(String, Vec<String>)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReply {
    pub fn encode(&self) -> String {
        let mut line = serde_json::to_string(self).expect("reply serialization");
        line.push('\n');
        line
    }

    pub fn into_output(self, duration_ms: u64) -> ExecOutput {
        match self.status.as_str() {
            "ok" => match self.columns.map(Table::new) {
                Some(Ok(table)) => ExecOutput::ok(table, duration_ms),
                Some(Err(e)) => ExecOutput::failure(
                    ExecStatus::ProtocolError,
                    format!("runner returned an invalid table: {e}"),
                    duration_ms,
                ),
                None => ExecOutput::failure(
                    ExecStatus::ProtocolError,
                    "ok reply without columns",
                    duration_ms,
                ),
            },
            "runtime-error" => ExecOutput::failure(
                ExecStatus::RuntimeError,
                self.error.unwrap_or_else(|| "runtime error".into()),
                duration_ms,
            ),
            "timeout" => ExecOutput::failure(
                ExecStatus::Timeout,
                self.error.unwrap_or_else(|| "timed out".into()),
                duration_ms,
            ),
            "protocol-error" => ExecOutput::failure(
                ExecStatus::ProtocolError,
                self.error.unwrap_or_else(|| "protocol error".into()),
                duration_ms,
            ),
            other => ExecOutput::failure(
                ExecStatus::ProtocolError,
                format!("unknown reply status `{other}`"),
                duration_ms,
            ),
        }
    }

    pub fn from_output(output: &ExecOutput) -> Self {
        RunReply {
            status: output.status.as_str().to_string(),
            columns: output.value.as_ref().map(|t| {
                t.columns()
                    .iter()
                    .map(|c| (c.name.clone(), c.cells.clone()))
                    .collect()
            }),
            error: output.error_message.clone(),
        }
    }
}

/// Decode a reply line. Malformed replies become protocol errors carrying the
/// raw payload.
pub fn decode_reply(line: &str, duration_ms: u64) -> ExecOutput {
    match serde_json::from_str::<RunReply>(line.trim_end_matches(['\n', '\r'])) {
        Ok(reply) => reply.into_output(duration_ms),
        Err(e) => ExecOutput::failure(
            ExecStatus::ProtocolError,
            format!("malformed runner reply ({e}): {line}"),
            duration_ms,
        ),
    }
}

struct Spawned {
    child: Child,
    // the jail directory lives as long as the process
    _jail: TempDir,
}

/// Executes each program in a fresh runner process.
///
/// The runner is started with a cleared environment (only `PATH` is kept) in
/// an empty temporary working directory. With a warm pool, processes are
/// started ahead of time so interpreter startup overlaps with other work;
/// each process still serves exactly one request.
pub struct SubprocessExecutor {
    command: Vec<String>,
    grace: Duration,
    pool: Option<Mutex<Vec<Spawned>>>,
    pool_size: usize,
    spawned: AtomicUsize,
}

impl SubprocessExecutor {
    pub fn new(command: Vec<String>) -> Self {
        assert!(!command.is_empty(), "runner command must not be empty");
        SubprocessExecutor {
            command,
            grace: DEFAULT_GRACE,
            pool: None,
            pool_size: 0,
            spawned: AtomicUsize::new(0),
        }
    }

    /// Command from `TABPROMPT_RUNNER` (whitespace-separated), or the default
    /// `tabprompt-runner` on `PATH`.
    pub fn from_env() -> Self {
        let command = std::env::var(ENV_RUNNER).unwrap_or_else(|_| DEFAULT_RUNNER.to_string());
        Self::new(command.split_whitespace().map(str::to_string).collect())
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    pub fn with_warm_pool(mut self, size: usize) -> Self {
        self.pool_size = size;
        self.pool = (size > 0).then(|| Mutex::new(Vec::with_capacity(size)));
        self
    }

    /// Number of runner processes started so far.
    pub fn processes_spawned(&self) -> usize {
        self.spawned.load(Ordering::SeqCst)
    }

    fn spawn(&self) -> std::io::Result<Spawned> {
        let jail = tempfile::Builder::new()
            .prefix("tabprompt-jail-")
            .tempdir()?;
        let mut cmd = Command::new(resolve(&self.command[0]));
        cmd.args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .current_dir(jail.path())
            .env_clear();
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }
        let child = cmd.spawn()?;
        self.spawned.fetch_add(1, Ordering::SeqCst);
        Ok(Spawned { child, _jail: jail })
    }

    fn acquire(&self) -> std::io::Result<Spawned> {
        let Some(pool) = &self.pool else {
            return self.spawn();
        };
        let mut idle = pool.lock().expect("pool lock");
        let taken = idle.pop();
        while idle.len() < self.pool_size {
            match self.spawn() {
                Ok(s) => idle.push(s),
                Err(_) => break,
            }
        }
        drop(idle);
        match taken {
            Some(s) => Ok(s),
            None => self.spawn(),
        }
    }
}

/// Resolve a bare program name against `PATH` before the environment is
/// cleared for the child.
fn resolve(program: &str) -> PathBuf {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.to_path_buf();
    }
    std::env::var_os("PATH")
        .and_then(|paths| {
            std::env::split_paths(&paths)
                .map(|dir| dir.join(program))
                .find(|candidate| candidate.is_file())
        })
        .unwrap_or_else(|| p.to_path_buf())
}

impl Drop for SubprocessExecutor {
    fn drop(&mut self) {
        if let Some(pool) = &self.pool {
            if let Ok(mut idle) = pool.lock() {
                for mut s in idle.drain(..) {
                    let _ = s.child.kill();
                    let _ = s.child.wait();
                }
            }
        }
    }
}

impl Executor for SubprocessExecutor {
    fn execute(&self, program: &str, output_var: &str, timeout_ms: u64) -> ExecOutput {
        let started = Instant::now();
        let elapsed = || started.elapsed().as_millis() as u64;
        if program.trim().is_empty() || timeout_ms == 0 {
            return ExecOutput::failure(
                ExecStatus::ProtocolError,
                "empty program or zero timeout",
                0,
            );
        }
        let mut spawned = match self.acquire() {
            Ok(s) => s,
            Err(e) => {
                return ExecOutput::failure(
                    ExecStatus::ProtocolError,
                    format!("runner unavailable ({}): {e}", self.command[0]),
                    elapsed(),
                )
            }
        };
        let request = RunRequest {
            program: program.to_string(),
            output_var: output_var.to_string(),
            timeout_ms,
        };

        let (tx, rx) = mpsc::channel();
        let stdout = spawned.child.stdout.take().expect("piped stdout");
        std::thread::spawn(move || {
            let mut line = String::new();
            let result = BufReader::new(stdout).read_line(&mut line).map(|_| line);
            let _ = tx.send(result);
        });
        if let Some(mut stdin) = spawned.child.stdin.take() {
            // a runner that dies early shows up below as a missing reply
            let _ = stdin.write_all(request.encode().as_bytes());
        }

        let deadline = Duration::from_millis(timeout_ms) + self.grace;
        let outcome = rx.recv_timeout(deadline);
        let _ = spawned.child.kill();
        let exit = spawned.child.wait().ok();
        match outcome {
            Ok(Ok(line)) if !line.trim().is_empty() => decode_reply(&line, elapsed()),
            Ok(Ok(_)) | Err(mpsc::RecvTimeoutError::Disconnected) => ExecOutput::failure(
                ExecStatus::ProtocolError,
                format!(
                    "runner exited without a reply ({})",
                    exit.map_or("unknown status".to_string(), |s| s.to_string())
                ),
                elapsed(),
            ),
            Ok(Err(e)) => ExecOutput::failure(
                ExecStatus::ProtocolError,
                format!("reading runner reply: {e}"),
                elapsed(),
            ),
            Err(mpsc::RecvTimeoutError::Timeout) => ExecOutput::failure(
                ExecStatus::Timeout,
                format!("no reply within {timeout_ms} ms"),
                elapsed(),
            ),
        }
    }
}

/// One canned reply, chosen when `contains` occurs in the program text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CannedOutput {
    pub contains: String,
    #[serde(flatten)]
    pub reply: RunReply,
}

/// Executor stub that answers from canned replies, in order of declaration.
/// Programs matching nothing fail with a runtime error.
#[derive(Debug, Default)]
pub struct ReplayExecutor {
    canned: Vec<CannedOutput>,
    calls: AtomicUsize,
    seen: Mutex<Vec<String>>,
}

impl ReplayExecutor {
    pub fn new(canned: Vec<CannedOutput>) -> Self {
        ReplayExecutor {
            canned,
            ..Default::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Programs received so far, in call order.
    pub fn programs(&self) -> Vec<String> {
        self.seen.lock().expect("replay lock").clone()
    }
}

impl Executor for ReplayExecutor {
    fn execute(&self, program: &str, _output_var: &str, _timeout_ms: u64) -> ExecOutput {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen
            .lock()
            .expect("replay lock")
            .push(program.to_string());
        match self.canned.iter().find(|c| program.contains(&c.contains)) {
            Some(c) => c.reply.clone().into_output(0),
            None => {
                ExecOutput::failure(ExecStatus::RuntimeError, "no canned output for program", 0)
            }
        }
    }
}

//! Running an external command with a wall-clock limit.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A command line plus the limits it runs under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub cwd: Option<PathBuf>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl ExternalCommand {
    pub fn new(program: impl Into<String>) -> Self {
        ExternalCommand {
            program: program.into(),
            args: Vec::new(),
            cwd: None,
            timeout_ms: default_timeout_ms(),
        }
    }

    /// `sh -c <script>`, convenient for tests and ad-hoc adapters.
    pub fn shell(script: impl Into<String>) -> Self {
        ExternalCommand {
            args: vec!["-c".into(), script.into()],
            ..ExternalCommand::new("sh")
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout_ms = timeout.as_millis() as u64;
        self
    }

    pub fn in_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cwd = Some(dir.into());
        self
    }

    /// Writes `input` to stdin, returns stdout. Non-zero exit, timeout and
    /// non-UTF-8 output are errors; on timeout the child is killed.
    pub fn run(&self, input: &str) -> Result<String> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &self.cwd {
            cmd.current_dir(dir);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| Error::Command(format!("cannot start '{}': {e}", self.program)))?;

        let mut stdin = child.stdin.take().expect("stdin piped");
        let input = input.to_owned();
        // A child that never reads must not block us past the deadline.
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(input.as_bytes());
        });
        let mut stdout = child.stdout.take().expect("stdout piped");
        let mut stderr = child.stderr.take().expect("stderr piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut out = Vec::new();
            let mut err = Vec::new();
            let r = stdout.read_to_end(&mut out);
            let _ = stderr.read_to_end(&mut err);
            let _ = tx.send(r.map(|_| (out, err)));
        });

        let timeout = Duration::from_millis(self.timeout_ms);
        let (out, err) = match rx.recv_timeout(timeout) {
            Ok(Ok(pair)) => pair,
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Command(format!("reading output of '{}': {e}", self.program)));
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Command(format!(
                    "'{}' timed out after {} ms",
                    self.program, self.timeout_ms
                )));
            }
        };
        let _ = writer.join();
        let status = child
            .wait()
            .map_err(|e| Error::Command(format!("waiting for '{}': {e}", self.program)))?;
        if !status.success() {
            let err = String::from_utf8_lossy(&err);
            return Err(Error::Command(format!(
                "'{}' exited with {status}: {}",
                self.program,
                err.trim()
            )));
        }
        String::from_utf8(out).map_err(|_| Error::Command(format!("'{}' wrote non-UTF-8 output", self.program)))
    }
}

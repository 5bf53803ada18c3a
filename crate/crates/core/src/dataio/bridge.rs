//! Subprocess scorer protocol.
//!
//! The scorer is started once and kept alive. For each evaluation one
//! request line is written to its stdin:
//!
//! ```text
//! d a_1 ... a_d b_1 ... b_d\n
//! ```
//!
//! and one line holding a single decimal number is read back from its
//! stdout. Numbers are written in shortest round-trip form. Requests are
//! serialized; the scorer never sees two requests in flight.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::similarity::{Scorer, Similarity};

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    responses: usize,
}

pub struct BridgeScorer {
    command: String,
    pipe: Mutex<Pipe>,
}

fn eval_error(message: String) -> Error {
    Error::Evaluation { location: None, message }
}

impl BridgeScorer {
    /// Launches `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| eval_error(format!("cannot start scorer `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { command: command.to_string(), pipe: Mutex::new(Pipe { child, stdin, stdout, responses: 0 }) })
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

pub(crate) fn format_request(a: &[f64], b: &[f64]) -> String {
    let mut line = a.len().to_string();
    for v in a.iter().chain(b) {
        line.push(' ');
        line.push_str(&v.to_string());
    }
    line.push('\n');
    line
}

impl Scorer for BridgeScorer {
    fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let mut pipe = self.pipe.lock().unwrap_or_else(|e| e.into_inner());
        let request = format_request(a, b);
        pipe.stdin
            .write_all(request.as_bytes())
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| eval_error(format!("scorer `{}`: write failed: {e}", self.command)))?;
        let mut line = String::new();
        let read = pipe
            .stdout
            .read_line(&mut line)
            .map_err(|e| eval_error(format!("scorer `{}`: read failed: {e}", self.command)))?;
        pipe.responses += 1;
        let lineno = pipe.responses;
        if read == 0 {
            return Err(eval_error(format!("scorer `{}` closed its output before response line {lineno}", self.command)));
        }
        line.trim()
            .parse::<f64>()
            .map_err(|_| eval_error(format!("scorer `{}`: response line {lineno}: cannot parse `{}`", self.command, line.trim())))
    }
}

impl Drop for BridgeScorer {
    fn drop(&mut self) {
        let pipe = self.pipe.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = pipe.child.kill();
        let _ = pipe.child.wait();
    }
}

/// Black-box similarity backed by a scorer subprocess.
pub fn blackbox_bridge(command: &str) -> Result<Similarity> {
    let scorer = BridgeScorer::spawn(command)?;
    Ok(Similarity::blackbox(command, Arc::new(scorer)))
}

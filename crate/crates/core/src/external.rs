//! External-scorer subprocess protocol: newline-delimited JSON over the
//! child's standard input and output.
//!
//! The child announces `{"proto": 1}` once on startup, then answers one
//! request per line. Requests carry the image as base64 of row-major
//! little-endian 32-bit floats. Replies must echo the request id; a
//! mismatched id is a protocol violation, not a reordering to tolerate.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierError;
use crate::dataset::image_to_le_bytes;
use crate::image::Image;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Serialize)]
struct ScoreRequest<'a> {
    id: u64,
    h: usize,
    w: usize,
    label: u32,
    pixels: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    id: u64,
    score: f64,
}

#[derive(Deserialize)]
struct Handshake {
    proto: u32,
}

/// One live scorer subprocess. I/O is strictly request-reply; concurrent
/// callers must hold an external lock or use separate sessions.
pub struct ExternalSession {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

fn failure(detail: impl Into<String>) -> ClassifierError {
    ClassifierError::ScorerFailure {
        detail: detail.into(),
    }
}

impl ExternalSession {
    /// Spawns the child and waits for its protocol announcement.
    pub fn spawn(command: &[String]) -> Result<Self, ClassifierError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| failure("empty scorer command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| failure(format!("failed to spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut session = Self {
            child,
            stdin,
            stdout,
            next_id: 0,
        };
        let line = session.read_line()?;
        let hs: Handshake = serde_json::from_str(&line)
            .map_err(|e| failure(format!("bad handshake {line:?}: {e}")))?;
        if hs.proto != PROTOCOL_VERSION {
            return Err(failure(format!(
                "scorer speaks protocol {}, expected {PROTOCOL_VERSION}",
                hs.proto
            )));
        }
        Ok(session)
    }

    fn read_line(&mut self) -> Result<String, ClassifierError> {
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| failure(format!("read from scorer failed: {e}")))?;
        if n == 0 {
            return Err(failure("scorer closed its output"));
        }
        Ok(line.trim_end().to_owned())
    }

    /// Scores one image, enforcing id match and score range.
    pub fn score(&mut self, img: &Image, label: u32) -> Result<f64, ClassifierError> {
        let id = self.next_id;
        self.next_id += 1;
        let pixels = BASE64.encode(image_to_le_bytes(img));
        let request = ScoreRequest {
            id,
            h: img.height(),
            w: img.width(),
            label,
            pixels: &pixels,
        };
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|()| self.stdin.flush())
            .map_err(|e| failure(format!("write to scorer failed: {e}")))?;
        let reply = self.read_line()?;
        let response: ScoreResponse = serde_json::from_str(&reply)
            .map_err(|e| failure(format!("bad reply {reply:?}: {e}")))?;
        if response.id != id {
            return Err(failure(format!(
                "reply id {} does not match request id {id}",
                response.id
            )));
        }
        if !(response.score.is_finite() && (0.0..=1.0).contains(&response.score)) {
            return Err(failure(format!("score {} outside [0, 1]", response.score)));
        }
        Ok(response.score)
    }
}

impl Drop for ExternalSession {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

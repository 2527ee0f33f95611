//! Wire protocol: length-prefixed JSON envelopes over a byte stream.
//!
//! A frame is the payload length in bytes as ASCII decimal, a newline, then
//! exactly that many bytes of UTF-8 JSON:
//!
//! ```text
//! 66\n{"session_id":null,"seq":1,"kind":"hello","payload":{"version":1}}
//! ```

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use smartlet_core::world::eventlog::EventRecord;
use smartlet_core::{Snapshot, WorldCommand};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames above this size are refused before allocation.
pub const MAX_FRAME_BYTES: usize = 4 << 20;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad length prefix {0:?}")]
    Length(String),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("frame is not UTF-8")]
    Utf8,
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl BufRead) -> Result<Option<String>, FrameError> {
    let mut header = String::new();
    if r.read_line(&mut header)? == 0 {
        return Ok(None);
    }
    let digits = header.trim_end_matches(['\n', '\r']);
    let len: usize = digits.parse().map_err(|_| FrameError::Length(digits.to_string()))?;
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body)?;
    String::from_utf8(body).map(Some).map_err(|_| FrameError::Utf8)
}

pub fn write_frame(w: &mut impl Write, body: &str) -> io::Result<()> {
    write!(w, "{}\n{body}", body.len())?;
    w.flush()
}

/// Common envelope of both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<M> {
    pub session_id: Option<u64>,
    pub seq: u64,
    #[serde(flatten)]
    pub message: M,
}

impl<M: Serialize> Envelope<M> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelopes serialize")
    }
}

pub type ClientEnvelope = Envelope<ClientMessage>;
pub type ServerEnvelope = Envelope<ServerMessage>;

/// Where a scenario comes from: inline TOML or a bundled name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    Toml(String),
    Bundled(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ClientMessage {
    /// First message on a connection. Without a session id a new session
    /// is created; with one, the connection attaches to it.
    Hello { version: u32 },
    LoadScenario { source: ScenarioSource },
    Start,
    Pause,
    Step { n: u64 },
    /// Multiple of real time; 1 tick is 1 ms.
    SetSpeed { factor: f64 },
    MoveLaser { x_mm: f64, y_mm: f64, on: bool },
    ToggleZone { id: u32 },
    EmitFrame { frame: String },
    PlaceRobot { robot: usize, x_mm: f64, y_mm: f64, heading_deg: f64 },
    /// Rebuild the world from the loaded scenario, optionally reseeded.
    Reset { seed: Option<u64> },
    /// Ask for the session so far as a replayable scenario.
    Record,
}

impl ClientMessage {
    /// The world-level command this message maps to, if any.
    pub fn world_command(&self) -> Option<WorldCommand> {
        Some(match self.clone() {
            ClientMessage::MoveLaser { x_mm, y_mm, on } => WorldCommand::MoveLaser { x_mm, y_mm, on },
            ClientMessage::ToggleZone { id } => WorldCommand::ToggleZone { id },
            ClientMessage::EmitFrame { frame } => WorldCommand::EmitFrame { frame },
            ClientMessage::PlaceRobot { robot, x_mm, y_mm, heading_deg } => {
                WorldCommand::PlaceRobot { robot, x_mm, y_mm, heading_deg }
            }
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not a frame, not JSON or not a known message.
    Malformed,
    Version,
    /// Hello missing before other messages.
    Handshake,
    UnknownSession,
    /// Client sequence number did not increase.
    StaleSeq,
    NoScenario,
    Scenario,
    InvalidCommand,
    /// The world stopped on a numerical fault; the session is paused.
    World,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Empty,
    Paused,
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { version: u32, session_id: u64, snapshot_rate: f64 },
    /// Full world state; self-contained.
    Snapshot { state: RunState, speed: f64, world: Snapshot },
    Event(EventRecord),
    /// Client message `seq` was applied; `tick` is the boundary it bound to.
    Ack { seq: u64, tick: u64 },
    /// `seq` names the client message being refused, when known.
    Error { code: ErrorCode, message: String, seq: Option<u64> },
    Recording { scenario_toml: String, commands: usize },
}

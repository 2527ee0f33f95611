//! Line-delimited JSON event records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Pose,
    Din,
    Act,
    PhaseTransition,
    Bubble,
    Dock,
    Undock,
    FrameRx,
    Power,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Pose => "pose",
            EventKind::Din => "din",
            EventKind::Act => "act",
            EventKind::PhaseTransition => "phase_transition",
            EventKind::Bubble => "bubble",
            EventKind::Dock => "dock",
            EventKind::Undock => "undock",
            EventKind::FrameRx => "frame_rx",
            EventKind::Power => "power",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: u64,
    pub robot: Option<usize>,
    pub kind: EventKind,
    pub payload: Value,
}

/// Round to 1e-4 so logs do not depend on the last bits of libm results.
pub fn round4(v: f64) -> f64 {
    let r = (v * 1e4).round() / 1e4;
    if r == 0.0 { 0.0 } else { r }
}

/// Builder for a payload object with rounded floats.
#[derive(Default)]
pub struct Payload(Map<String, Value>);

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(mut self, key: &str, v: f64) -> Self {
        self.0.insert(key.into(), Value::from(round4(v)));
        self
    }

    pub fn int(mut self, key: &str, v: i64) -> Self {
        self.0.insert(key.into(), Value::from(v));
        self
    }

    pub fn flag(mut self, key: &str, v: bool) -> Self {
        self.0.insert(key.into(), Value::from(v));
        self
    }

    pub fn text(mut self, key: &str, v: impl Into<String>) -> Self {
        self.0.insert(key.into(), Value::from(v.into()));
        self
    }

    pub fn value(mut self, key: &str, v: Value) -> Self {
        self.0.insert(key.into(), v);
        self
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}

impl EventRecord {
    pub fn new(tick: u64, robot: Option<usize>, kind: EventKind, payload: Payload) -> Self {
        EventRecord { tick, robot, kind, payload: payload.build() }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event records always serialize")
    }
}

#[derive(Debug, Error)]
#[error("line {line}: {source}")]
pub struct LogParseError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

/// An ordered sequence of records, one JSON object per line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn for_robot(&self, robot: usize) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter(move |r| r.robot == Some(robot))
    }
}

impl FromStr for EventLog {
    type Err = LogParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut records = vec![];
        for (i, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|source| LogParseError { line: i + 1, source })?);
        }
        Ok(EventLog { records })
    }
}

impl Extend<EventRecord> for EventLog {
    fn extend<T: IntoIterator<Item = EventRecord>>(&mut self, iter: T) {
        self.records.extend(iter);
    }
}

//! Compare an event log against a golden copy.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Keys carrying host timing, removed before comparison.
const WALL_TIME_KEYS: [&str; 2] = ["wall_time_s", "wall_ms"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Verdict {
    Pass { records: usize },
    Fail { line: usize, expected: Option<String>, actual: Option<String> },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

fn strip(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in WALL_TIME_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip);
        }
        Value::Array(items) => items.iter_mut().for_each(strip),
        _ => {}
    }
}

/// Canonical form of one line: wall-time fields dropped. Lines that are
/// not JSON compare verbatim.
pub fn normalize_line(line: &str) -> String {
    match serde_json::from_str::<Value>(line) {
        Ok(mut v) => {
            strip(&mut v);
            v.to_string()
        }
        Err(_) => line.to_string(),
    }
}

pub fn verify(log: &str, golden: &str) -> Verdict {
    let ours: Vec<&str> = log.lines().filter(|l| !l.trim().is_empty()).collect();
    let theirs: Vec<&str> = golden.lines().filter(|l| !l.trim().is_empty()).collect();
    for i in 0..ours.len().max(theirs.len()) {
        let a = ours.get(i).map(|l| normalize_line(l));
        let b = theirs.get(i).map(|l| normalize_line(l));
        if a != b {
            return Verdict::Fail {
                line: i + 1,
                expected: theirs.get(i).map(|s| s.to_string()),
                actual: ours.get(i).map(|s| s.to_string()),
            };
        }
    }
    Verdict::Pass { records: ours.len() }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG: &str = "{\"tick\":0,\"robot\":0,\"kind\":\"pose\",\"payload\":{\"x\":1.0}}\n{\"tick\":5,\"robot\":0,\"kind\":\"din\",\"payload\":{\"value\":1}}\n";

    #[test]
    fn identical_logs_pass() {
        assert_eq!(verify(LOG, LOG), Verdict::Pass { records: 2 });
        assert!(verify("", "").passed());
    }

    #[test]
    fn first_divergence_is_reported() {
        let other = LOG.replace("\"tick\":5", "\"tick\":6");
        match verify(&other, LOG) {
            Verdict::Fail { line, .. } => assert_eq!(line, 2),
            v => panic!("{v:?}"),
        }
        match verify(LOG.lines().next().unwrap(), LOG) {
            Verdict::Fail { line, actual, .. } => assert_eq!((line, actual), (2, None)),
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn wall_time_is_ignored() {
        let a = "{\"ticks\":3,\"wall_time_s\":0.25}";
        let b = "{\"ticks\":3,\"wall_time_s\":9.5}";
        assert!(verify(a, b).passed());
    }
}

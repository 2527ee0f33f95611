//! Textual program format, one `key = value` per line.
//!
//! ```text
//! # three timed single-actuator phases
//! phase1.act = 0
//! phase1.period = 4
//! phase1.duty = 7
//! phase1.timeout = 7
//! ...
//! condition = rising_edge
//! mode = advance_on_timeout
//! debounce = 0
//! ```
//!
//! `phaseN.act` lists actuator indices separated by commas, or `none`.
//! Condition and mode accept either their name or numeric id.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::lablet_vm::{
    ActMask, LabletProgram, PhaseConfig, ProgramError, ProgramWord, SensorCondition,
    TransitionMode, ACTUATOR_COUNT, MAX_DEBOUNCE, PHASE_COUNT,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown field `{key}`")]
    UnknownField { line: usize, key: String },
    #[error("line {line}: duplicate field `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing field `{0}`")]
    Missing(String),
    #[error("field `{field}` out of range: {value}")]
    OutOfRange { field: String, value: String },
    #[error(transparent)]
    Program(#[from] ProgramError),
}

const PHASE_KEYS: [&str; 4] = ["act", "period", "duty", "timeout"];

fn field_names() -> Vec<String> {
    let mut names = vec![];
    for p in 1..=PHASE_COUNT {
        for k in PHASE_KEYS {
            names.push(format!("phase{p}.{k}"));
        }
    }
    names.extend(["condition", "mode", "debounce"].map(String::from));
    names
}

/// Parse program text into a validated program.
pub fn parse_program(text: &str) -> Result<LabletProgram, AssembleError> {
    let known = field_names();
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(AssembleError::Syntax { line: i + 1 })?;
        let key = key.trim().to_string();
        if !known.contains(&key) {
            return Err(AssembleError::UnknownField { line: i + 1, key });
        }
        if fields.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(AssembleError::Duplicate { line: i + 1, key });
        }
    }
    let get = |key: &str| fields.get(key).ok_or_else(|| AssembleError::Missing(key.to_string()));
    let code = |key: &str, max: u8| -> Result<u8, AssembleError> {
        let raw = get(key)?;
        raw.parse::<u8>()
            .ok()
            .filter(|v| *v <= max)
            .ok_or_else(|| AssembleError::OutOfRange { field: key.to_string(), value: raw.clone() })
    };

    let mut phases = [PhaseConfig::default(); PHASE_COUNT];
    for (i, phase) in phases.iter_mut().enumerate() {
        let prefix = format!("phase{}", i + 1);
        let act_key = format!("{prefix}.act");
        *phase = PhaseConfig {
            act_mask: parse_mask(&act_key, get(&act_key)?)?,
            period_code: code(&format!("{prefix}.period"), 15)?,
            duty_code: code(&format!("{prefix}.duty"), 7)?,
            timeout_code: code(&format!("{prefix}.timeout"), 15)?,
        };
    }
    let condition = get("condition")?.parse::<SensorCondition>().map_err(|_| {
        AssembleError::OutOfRange { field: "condition".into(), value: fields["condition"].clone() }
    })?;
    let mode = get("mode")?.parse::<TransitionMode>().map_err(|_| AssembleError::OutOfRange {
        field: "mode".into(),
        value: fields["mode"].clone(),
    })?;
    let program = LabletProgram {
        phases,
        condition,
        mode,
        debounce_ticks: code("debounce", MAX_DEBOUNCE)?,
    };
    program.validate()?;
    Ok(program)
}

fn parse_mask(key: &str, raw: &str) -> Result<ActMask, AssembleError> {
    if raw.eq_ignore_ascii_case("none") {
        return Ok(ActMask::NONE);
    }
    let mut bits = 0u8;
    for part in raw.split(',') {
        let idx = part
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|i| *i < ACTUATOR_COUNT)
            .ok_or_else(|| AssembleError::OutOfRange { field: key.into(), value: raw.into() })?;
        bits |= 1 << idx;
    }
    Ok(ActMask::new(bits)?)
}

/// Canonical text form of a program.
pub fn format_program(program: &LabletProgram) -> String {
    let mut out = String::new();
    for (i, p) in program.phases.iter().enumerate() {
        let n = i + 1;
        let act = if p.act_mask.is_empty() {
            "none".to_string()
        } else {
            p.act_mask.active().map(|a| a.to_string()).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(out, "phase{n}.act = {act}");
        let _ = writeln!(out, "phase{n}.period = {}", p.period_code);
        let _ = writeln!(out, "phase{n}.duty = {}", p.duty_code);
        let _ = writeln!(out, "phase{n}.timeout = {}", p.timeout_code);
    }
    let _ = writeln!(out, "condition = {}", program.condition.name());
    let _ = writeln!(out, "mode = {}", program.mode.name());
    let _ = writeln!(out, "debounce = {}", program.debounce_ticks);
    out
}

pub fn assemble(text: &str) -> Result<ProgramWord, AssembleError> {
    Ok(parse_program(text)?.assemble()?)
}

pub fn disassemble(word: ProgramWord) -> Result<String, AssembleError> {
    Ok(format_program(&crate::lablet_vm::decode_run_command(word)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: &str = "\
phase1.act = 0
phase1.period = 4
phase1.duty = 7
phase1.timeout = 7
phase2.act = 1
phase2.period = 4
phase2.duty = 7
phase2.timeout = 7
phase3.act = 2
phase3.period = 4
phase3.duty = 7
phase3.timeout = 7
condition = never
mode = advance_on_timeout
debounce = 0
";

    #[test]
    fn fig2_plan_round_trips() {
        let word = assemble(FIG2).unwrap();
        let text = disassemble(word).unwrap();
        assert_eq!(text, FIG2);
        assert_eq!(assemble(&text).unwrap(), word);
    }

    #[test]
    fn missing_field_is_named() {
        let text = FIG2.replace("phase2.duty = 7\n", "");
        assert_eq!(assemble(&text), Err(AssembleError::Missing("phase2.duty".into())));
    }

    #[test]
    fn out_of_range_field_is_named() {
        let text = FIG2.replace("phase3.duty = 7", "phase3.duty = 9");
        match assemble(&text) {
            Err(AssembleError::OutOfRange { field, .. }) => assert_eq!(field, "phase3.duty"),
            other => panic!("unexpected {other:?}"),
        }
        let text = FIG2.replace("phase1.act = 0", "phase1.act = 3");
        assert!(matches!(assemble(&text), Err(AssembleError::OutOfRange { .. })));
        let text = FIG2.replace("debounce = 0", "debounce = 8");
        assert!(matches!(assemble(&text), Err(AssembleError::OutOfRange { .. })));
    }

    #[test]
    fn comments_masks_and_unknown_keys() {
        let text = FIG2.replace("phase1.act = 0", "phase1.act = 0, 2   # two BGEs");
        let p = parse_program(&text).unwrap();
        assert_eq!(p.phases[0].act_mask.bits(), 0b101);
        let text = format!("{FIG2}colour = red\n");
        assert!(matches!(assemble(&text), Err(AssembleError::UnknownField { line: 16, .. })));
        let text = format!("{FIG2}debounce = 1\n");
        assert!(matches!(assemble(&text), Err(AssembleError::Duplicate { .. })));
    }
}

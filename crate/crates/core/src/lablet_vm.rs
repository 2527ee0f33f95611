//! Behavioral model of the lablet controller chiplet.
//!
//! The chiplet holds a 58-bit program describing three actuation phases, a
//! sensor predicate applied to the 1-bit `Din` input and a transition mode.
//! The bit layout and the predicate set are stand-ins for the undocumented
//! hardware internals; they reproduce every behavior the robot is observed
//! to perform (timed phase plans, sensor-triggered switching, looping).
//!
//! Layout, MSB first:
//!
//! | bits  | field                                                |
//! |-------|------------------------------------------------------|
//! | 0-41  | 3 x phase (3 mask, 4 period, 3 duty, 4 timeout code) |
//! | 42-44 | sensor condition                                     |
//! | 45-46 | transition mode                                      |
//! | 47-49 | debounce ticks                                       |
//! | 50-53 | reserved, must be zero                               |
//! | 54-57 | parity: XOR fold of bits 0-53 by `index % 4`         |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROGRAM_BITS: usize = 58;
pub const PAYLOAD_BITS: usize = 54;
pub const PHASE_COUNT: usize = 3;
pub const ACTUATOR_COUNT: usize = 3;
/// Ring length of the `Din` history; covers the largest debounce window.
pub const HISTORY_LEN: usize = 16;
pub const MAX_DEBOUNCE: u8 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("expected {PROGRAM_BITS} bits, got {0}")]
    BitLength(usize),
    #[error("invalid bit character {0:?}; expected '0' or '1'")]
    BitChar(char),
    #[error("parity mismatch: stored {stored:04b}, computed {computed:04b}")]
    Parity { stored: u8, computed: u8 },
    #[error("reserved bits set: {0:04b}")]
    Reserved(u8),
    #[error("field `{field}` out of range: {value}")]
    OutOfRange { field: &'static str, value: u64 },
}

/// Three actuator outputs, bit `i` drives `ACT-i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActMask(u8);

impl ActMask {
    pub const NONE: ActMask = ActMask(0);

    pub fn new(bits: u8) -> Result<Self, ProgramError> {
        if bits > 0b111 {
            return Err(ProgramError::OutOfRange { field: "act_mask", value: bits as u64 });
        }
        Ok(ActMask(bits))
    }

    pub fn single(actuator: usize) -> Self {
        assert!(actuator < ACTUATOR_COUNT, "actuator index {actuator} out of range");
        ActMask(1 << actuator)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn is_active(self, actuator: usize) -> bool {
        actuator < ACTUATOR_COUNT && self.0 & (1 << actuator) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: ActMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn active(self) -> impl Iterator<Item = usize> {
        (0..ACTUATOR_COUNT).filter(move |&i| self.is_active(i))
    }
}

impl fmt::Display for ActMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03b}", self.0)
    }
}

/// One actuation phase. Codes index geometric lookup tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub act_mask: ActMask,
    pub period_code: u8,
    pub duty_code: u8,
    pub timeout_code: u8,
}

impl PhaseConfig {
    pub fn new(
        act_mask: ActMask,
        period_code: u8,
        duty_code: u8,
        timeout_code: u8,
    ) -> Result<Self, ProgramError> {
        check_range("period_code", period_code as u64, 15)?;
        check_range("duty_code", duty_code as u64, 7)?;
        check_range("timeout_code", timeout_code as u64, 15)?;
        Ok(PhaseConfig { act_mask, period_code, duty_code, timeout_code })
    }

    /// Pulse period, `2^code` ticks.
    pub fn period_ticks(&self) -> u64 {
        1u64 << self.period_code
    }

    /// Duty fraction, `(code + 1) / 8`.
    pub fn duty(&self) -> f64 {
        (self.duty_code as f64 + 1.0) / 8.0
    }

    /// High ticks per period; at least one so that every programmed pulse is visible.
    pub fn high_ticks(&self) -> u64 {
        (self.period_ticks() * (self.duty_code as u64 + 1) / 8).max(1)
    }

    /// Phase timeout, `2^code * 100` ticks; code 0 disables the timeout.
    pub fn timeout_ticks(&self) -> Option<u64> {
        (self.timeout_code != 0).then(|| (1u64 << self.timeout_code) * 100)
    }

    /// Outputs for the given tick offset within the phase.
    pub fn act_at(&self, ticks_in_phase: u64) -> ActMask {
        if pulse_high(ticks_in_phase, self.period_ticks(), self.high_ticks()) {
            self.act_mask
        } else {
            ActMask::NONE
        }
    }
}

/// Pulse schedule: high for the first `high_ticks` ticks of each period.
pub fn pulse_high(ticks_in_phase: u64, period_ticks: u64, high_ticks: u64) -> bool {
    period_ticks > 0 && ticks_in_phase % period_ticks < high_ticks
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorCondition {
    #[default]
    Never = 0,
    RisingEdge = 1,
    FallingEdge = 2,
    LevelHighSustained = 3,
    LevelLowSustained = 4,
    AnyEdge = 5,
    Always = 6,
    LevelHigh = 7,
}

impl SensorCondition {
    pub const ALL: [SensorCondition; 8] = [
        SensorCondition::Never,
        SensorCondition::RisingEdge,
        SensorCondition::FallingEdge,
        SensorCondition::LevelHighSustained,
        SensorCondition::LevelLowSustained,
        SensorCondition::AnyEdge,
        SensorCondition::Always,
        SensorCondition::LevelHigh,
    ];

    pub fn from_id(id: u8) -> Result<Self, ProgramError> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or(ProgramError::OutOfRange { field: "sensor_condition", value: id as u64 })
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorCondition::Never => "never",
            SensorCondition::RisingEdge => "rising_edge",
            SensorCondition::FallingEdge => "falling_edge",
            SensorCondition::LevelHighSustained => "level_high_sustained",
            SensorCondition::LevelLowSustained => "level_low_sustained",
            SensorCondition::AnyEdge => "any_edge",
            SensorCondition::Always => "always",
            SensorCondition::LevelHigh => "level_high",
        }
    }

    /// Samples of history the predicate looks at.
    pub fn window(self, debounce: u8) -> usize {
        match self {
            SensorCondition::Never | SensorCondition::Always => 0,
            SensorCondition::LevelHigh => 1,
            SensorCondition::LevelHighSustained | SensorCondition::LevelLowSustained => {
                debounce.max(1) as usize
            }
            SensorCondition::RisingEdge | SensorCondition::FallingEdge | SensorCondition::AnyEdge => {
                debounce as usize + 2
            }
        }
    }
}

impl FromStr for SensorCondition {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(id) = s.parse::<u64>() {
            return u8::try_from(id)
                .map_err(|_| ProgramError::OutOfRange { field: "condition", value: id })
                .and_then(Self::from_id);
        }
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or(ProgramError::OutOfRange { field: "condition", value: u64::MAX })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionMode {
    #[default]
    AdvanceOnSensor = 0,
    AdvanceOnTimeout = 1,
    SensorOrTimeout = 2,
    /// Sensor or timeout, and phase 3 wraps back to phase 1.
    Loop = 3,
}

impl TransitionMode {
    pub const ALL: [TransitionMode; 4] = [
        TransitionMode::AdvanceOnSensor,
        TransitionMode::AdvanceOnTimeout,
        TransitionMode::SensorOrTimeout,
        TransitionMode::Loop,
    ];

    pub fn from_id(id: u8) -> Result<Self, ProgramError> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or(ProgramError::OutOfRange { field: "transition_mode", value: id as u64 })
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            TransitionMode::AdvanceOnSensor => "advance_on_sensor",
            TransitionMode::AdvanceOnTimeout => "advance_on_timeout",
            TransitionMode::SensorOrTimeout => "sensor_or_timeout",
            TransitionMode::Loop => "loop",
        }
    }

    fn uses_sensor(self) -> bool {
        !matches!(self, TransitionMode::AdvanceOnTimeout)
    }

    fn uses_timeout(self) -> bool {
        !matches!(self, TransitionMode::AdvanceOnSensor)
    }
}

impl FromStr for TransitionMode {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(id) = s.parse::<u64>() {
            return u8::try_from(id)
                .map_err(|_| ProgramError::OutOfRange { field: "mode", value: id })
                .and_then(Self::from_id);
        }
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or(ProgramError::OutOfRange { field: "mode", value: u64::MAX })
    }
}

/// Decoded run command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabletProgram {
    pub phases: [PhaseConfig; PHASE_COUNT],
    pub condition: SensorCondition,
    pub mode: TransitionMode,
    pub debounce_ticks: u8,
}

impl LabletProgram {
    /// Three timed phases, each driving a single actuator continuously.
    pub fn sequence(actuators: [usize; 3], timeout_code: u8, mode: TransitionMode) -> Self {
        let phase = |a: usize| PhaseConfig {
            act_mask: ActMask::single(a),
            period_code: 4,
            duty_code: 7,
            timeout_code,
        };
        LabletProgram {
            phases: [phase(actuators[0]), phase(actuators[1]), phase(actuators[2])],
            condition: SensorCondition::Never,
            mode,
            debounce_ticks: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        for p in &self.phases {
            PhaseConfig::new(p.act_mask, p.period_code, p.duty_code, p.timeout_code)?;
            ActMask::new(p.act_mask.bits())?;
        }
        check_range("debounce", self.debounce_ticks as u64, MAX_DEBOUNCE as u64)
    }

    pub fn phase(&self, phase: Phase) -> Option<&PhaseConfig> {
        phase.index().map(|i| &self.phases[i])
    }

    /// Encode into the 58-bit run command.
    pub fn assemble(&self) -> Result<ProgramWord, ProgramError> {
        self.validate()?;
        let mut w = BitWriter::default();
        for p in &self.phases {
            w.push(p.act_mask.bits() as u64, 3);
            w.push(p.period_code as u64, 4);
            w.push(p.duty_code as u64, 3);
            w.push(p.timeout_code as u64, 4);
        }
        w.push(self.condition.id() as u64, 3);
        w.push(self.mode.id() as u64, 2);
        w.push(self.debounce_ticks as u64, 3);
        w.push(0, 4);
        debug_assert_eq!(w.len, PAYLOAD_BITS);
        let parity = xor_fold(w.value, PAYLOAD_BITS);
        w.push(parity as u64, 4);
        Ok(ProgramWord(w.value))
    }
}

/// Decode a 58-bit run command; parity and reserved bits are verified.
pub fn decode_run_command(word: ProgramWord) -> Result<LabletProgram, ProgramError> {
    let stored = (word.0 & 0xF) as u8;
    let body = word.0 >> 4;
    let computed = xor_fold(body, PAYLOAD_BITS);
    if stored != computed {
        return Err(ProgramError::Parity { stored, computed });
    }
    let mut r = BitReader { value: word.0, remaining: PROGRAM_BITS };
    let mut phases = [PhaseConfig::default(); PHASE_COUNT];
    for p in &mut phases {
        *p = PhaseConfig {
            act_mask: ActMask(r.take(3) as u8),
            period_code: r.take(4) as u8,
            duty_code: r.take(3) as u8,
            timeout_code: r.take(4) as u8,
        };
    }
    let condition = SensorCondition::from_id(r.take(3) as u8)?;
    let mode = TransitionMode::from_id(r.take(2) as u8)?;
    let debounce_ticks = r.take(3) as u8;
    let reserved = r.take(4) as u8;
    if reserved != 0 {
        return Err(ProgramError::Reserved(reserved));
    }
    Ok(LabletProgram { phases, condition, mode, debounce_ticks })
}

/// XOR fold of the low `len` bits, MSB-first index `i` feeding parity bit `i % 4`.
/// Parity bit 0 is the most significant bit of the returned nibble.
pub fn xor_fold(value: u64, len: usize) -> u8 {
    let mut nibble = 0u8;
    for i in 0..len {
        let bit = (value >> (len - 1 - i)) & 1;
        nibble ^= (bit as u8) << (3 - (i % 4));
    }
    nibble
}

/// Raw 58-bit program, stored in the low bits of a `u64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProgramWord(u64);

impl ProgramWord {
    pub const MASK: u64 = (1 << PROGRAM_BITS) - 1;

    pub fn from_u64(value: u64) -> Result<Self, ProgramError> {
        if value > Self::MASK {
            return Err(ProgramError::BitLength(64 - value.leading_zeros() as usize));
        }
        Ok(ProgramWord(value))
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self, ProgramError> {
        if bits.len() != PROGRAM_BITS {
            return Err(ProgramError::BitLength(bits.len()));
        }
        Ok(ProgramWord(bits.iter().fold(0, |acc, &b| (acc << 1) | b as u64)))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Bits MSB first.
    pub fn bits(self) -> Vec<bool> {
        (0..PROGRAM_BITS).map(|i| (self.0 >> (PROGRAM_BITS - 1 - i)) & 1 == 1).collect()
    }

    pub fn flip(self, index: usize) -> Self {
        assert!(index < PROGRAM_BITS);
        ProgramWord(self.0 ^ (1 << (PROGRAM_BITS - 1 - index)))
    }
}

impl fmt::Display for ProgramWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:058b}", self.0)
    }
}

impl FromStr for ProgramWord {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .trim()
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(ProgramError::BitChar(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_bits(&bits)
    }
}

#[derive(Default)]
struct BitWriter {
    value: u64,
    len: usize,
}

impl BitWriter {
    fn push(&mut self, field: u64, width: usize) {
        debug_assert!(field < (1 << width));
        self.value = (self.value << width) | field;
        self.len += width;
    }
}

struct BitReader {
    value: u64,
    remaining: usize,
}

impl BitReader {
    fn take(&mut self, width: usize) -> u64 {
        self.remaining -= width;
        (self.value >> self.remaining) & ((1 << width) - 1)
    }
}

fn check_range(field: &'static str, value: u64, max: u64) -> Result<(), ProgramError> {
    if value > max {
        Err(ProgramError::OutOfRange { field, value })
    } else {
        Ok(())
    }
}

/// Recent `Din` samples, newest last. Samples older than the ring read as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DinHistory {
    bits: u16,
    len: u8,
}

impl DinHistory {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut h = DinHistory::default();
        bits.iter().for_each(|&b| h.push(b));
        h
    }

    pub fn push(&mut self, din: bool) {
        self.bits = (self.bits << 1) | din as u16;
        self.len = (self.len + 1).min(HISTORY_LEN as u8);
    }

    /// Sample `ago` ticks back; 0 is the newest.
    pub fn ago(&self, ago: usize) -> bool {
        ago < self.len as usize && (self.bits >> ago) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Evaluate one of the eight sensor predicates over the `Din` history.
///
/// Edge predicates fire once, `debounce` ticks after the edge, when the new
/// level has been held for `debounce + 1` samples. Level predicates fire on
/// every tick the level holds.
pub fn evaluate_condition(condition: SensorCondition, history: &DinHistory, debounce: u8) -> bool {
    let held = |level: bool, n: usize| (0..n).all(|k| history.ago(k) == level);
    let edge_to = |level: bool| {
        let n = debounce as usize + 1;
        held(level, n) && history.ago(n) != level
    };
    match condition {
        SensorCondition::Never => false,
        SensorCondition::RisingEdge => edge_to(true),
        SensorCondition::FallingEdge => edge_to(false),
        SensorCondition::LevelHighSustained => held(true, debounce.max(1) as usize),
        SensorCondition::LevelLowSustained => held(false, debounce.max(1) as usize),
        SensorCondition::AnyEdge => edge_to(true) || edge_to(false),
        SensorCondition::Always => true,
        SensorCondition::LevelHigh => history.ago(0),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    One,
    Two,
    Three,
    #[default]
    Halted,
}

impl Phase {
    pub fn index(self) -> Option<usize> {
        match self {
            Phase::One => Some(0),
            Phase::Two => Some(1),
            Phase::Three => Some(2),
            Phase::Halted => None,
        }
    }

    /// 1-based phase number, 0 when halted.
    pub fn number(self) -> u8 {
        self.index().map_or(0, |i| i as u8 + 1)
    }

    fn next(self, mode: TransitionMode) -> Phase {
        match self {
            Phase::One => Phase::Two,
            Phase::Two => Phase::Three,
            Phase::Three if mode == TransitionMode::Loop => Phase::One,
            Phase::Three | Phase::Halted => Phase::Halted,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: Phase,
    pub ticks_in_phase: u64,
    pub history: DinHistory,
    pub act_out: ActMask,
    pub dout: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutput {
    pub act: ActMask,
    pub dout: bool,
    pub transition: Option<(Phase, Phase)>,
}

impl ControllerState {
    /// Idle controller awaiting a RUN command.
    pub fn halted() -> Self {
        Self::default()
    }

    /// Controller at the start of phase 1.
    pub fn running() -> Self {
        ControllerState { phase: Phase::One, ..Self::default() }
    }

    pub fn is_running(&self) -> bool {
        self.phase != Phase::Halted
    }

    /// Advance one tick.
    pub fn step(&mut self, program: &LabletProgram, din: bool) -> StepOutput {
        self.history.push(din);
        let mut transition = None;
        if let Some(cfg) = program.phase(self.phase) {
            let mode = program.mode;
            let sensor = mode.uses_sensor()
                && evaluate_condition(program.condition, &self.history, program.debounce_ticks);
            let timeout = mode.uses_timeout()
                && cfg.timeout_ticks().is_some_and(|t| self.ticks_in_phase >= t);
            if sensor || timeout {
                let next = self.phase.next(mode);
                transition = Some((self.phase, next));
                self.phase = next;
                self.ticks_in_phase = 0;
            }
        }
        self.act_out = program
            .phase(self.phase)
            .map_or(ActMask::NONE, |cfg| cfg.act_at(self.ticks_in_phase));
        if self.is_running() {
            self.ticks_in_phase += 1;
        }
        self.dout = transition.is_some();
        StepOutput { act: self.act_out, dout: self.dout, transition }
    }
}

/// Pure form of [`ControllerState::step`].
pub fn step_controller(
    state: &ControllerState,
    program: &LabletProgram,
    din: bool,
) -> (ControllerState, ActMask, bool) {
    let mut next = *state;
    let out = next.step(program, din);
    (next, out.act, out.dout)
}

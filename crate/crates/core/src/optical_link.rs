//! Optical programming channel: Manchester line code for the 8-bit command
//! plus 58-bit payload, clock recovery from a preamble, and binarisation of
//! sampled photodetector output.
//!
//! Frame on the wire, in half-bits:
//!
//! ```text
//! 1010101010101010 00 | 132 data half-bits (66 bits, MSB first)
//! ```
//!
//! The 16 alternating half-bits train the clock. The two trailing low
//! half-bits extend the last preamble low to three half-bits, a run that
//! never occurs in valid Manchester data and marks the frame start.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lablet_vm::{ProgramWord, PROGRAM_BITS};
use crate::photosensor::{Comparator, PdTransient};

pub const COMMAND_BITS: usize = 8;
pub const FRAME_BITS: usize = COMMAND_BITS + PROGRAM_BITS;
pub const PREAMBLE_TRAINING: usize = 16;
pub const PREAMBLE: [bool; 18] = [
    true, false, true, false, true, false, true, false, true, false, true, false, true, false, true,
    false, false, false,
];
/// Largest tolerated per-edge timing error, fraction of a half-bit.
pub const EDGE_TOLERANCE: f64 = 0.2;

const PLL_PHASE_GAIN: f64 = 0.3;
const PLL_FREQ_GAIN: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("half-bit period must be positive, got {0} ms")]
    InvalidParameter(f64),
    #[error("no preamble found")]
    NoFrame,
    #[error("coding violation at data bit {bit}")]
    Framing { bit: usize },
    #[error("waveform ends inside the frame")]
    Truncated,
    #[error("bad frame hex {0:?}")]
    Hex(String),
    #[error("waveform line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Which mid-bit transition encodes a logical 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// 1 = low then high (IEEE 802.3).
    #[default]
    LowHighIsOne,
    /// 1 = high then low (G. E. Thomas).
    HighLowIsOne,
}

impl Convention {
    fn halves(self, bit: bool) -> [bool; 2] {
        match self {
            Convention::LowHighIsOne => [!bit, bit],
            Convention::HighLowIsOne => [bit, !bit],
        }
    }

    fn bit(self, first: bool, second: bool) -> Option<bool> {
        (first != second).then_some(match self {
            Convention::LowHighIsOne => second,
            Convention::HighLowIsOne => first,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Load,
    Run,
    Halt,
    Reset,
    Reserved(u8),
}

impl Command {
    pub fn code(self) -> u8 {
        match self {
            Command::Load => 0x01,
            Command::Run => 0x02,
            Command::Halt => 0x03,
            Command::Reset => 0x04,
            Command::Reserved(c) => c,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            0x01 => Command::Load,
            0x02 => Command::Run,
            0x03 => Command::Halt,
            0x04 => Command::Reset,
            c => Command::Reserved(c),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpticalFrame {
    pub command: u8,
    pub payload: ProgramWord,
}

impl OpticalFrame {
    pub fn new(command: Command, payload: ProgramWord) -> Self {
        OpticalFrame { command: command.code(), payload }
    }

    /// A command without payload (RUN, HALT, RESET).
    pub fn bare(command: Command) -> Self {
        Self::new(command, ProgramWord::from_u64(0).expect("zero fits"))
    }

    pub fn command(&self) -> Command {
        Command::from_code(self.command)
    }

    pub fn bits(&self) -> Vec<bool> {
        let cmd = (0..COMMAND_BITS).map(|i| (self.command >> (COMMAND_BITS - 1 - i)) & 1 == 1);
        cmd.chain(self.payload.bits()).collect()
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self, LinkError> {
        if bits.len() != FRAME_BITS {
            return Err(LinkError::Truncated);
        }
        let command = bits[..COMMAND_BITS].iter().fold(0u8, |a, &b| (a << 1) | b as u8);
        let payload = ProgramWord::from_bits(&bits[COMMAND_BITS..]).map_err(|_| LinkError::Truncated)?;
        Ok(OpticalFrame { command, payload })
    }

    /// 17 hex digits: 66 frame bits followed by two zero pad bits.
    pub fn to_hex(&self) -> String {
        let v = (((self.command as u128) << PROGRAM_BITS) | self.payload.value() as u128) << 2;
        format!("{v:017x}")
    }

    pub fn from_hex(s: &str) -> Result<Self, LinkError> {
        let s = s.trim().trim_start_matches("0x");
        let bad = || LinkError::Hex(s.to_string());
        if s.len() != 17 {
            return Err(bad());
        }
        let v = u128::from_str_radix(s, 16).map_err(|_| bad())?;
        if v & 0b11 != 0 {
            return Err(bad());
        }
        let v = v >> 2;
        let payload = ProgramWord::from_u64((v & ProgramWord::MASK as u128) as u64).map_err(|_| bad())?;
        Ok(OpticalFrame { command: (v >> PROGRAM_BITS) as u8, payload })
    }
}

impl fmt::Display for OpticalFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_ms: f64,
    pub level: bool,
}

/// Piecewise-constant binary signal; each sample holds until the next. The
/// last sample marks the end of the record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<Sample>,
    /// Nominal half-bit period when known.
    pub half_bit_ms: Option<f64>,
}

impl Waveform {
    pub fn from_levels(levels: impl IntoIterator<Item = (f64, bool)>, half_bit_ms: Option<f64>) -> Self {
        let mut samples: Vec<Sample> = vec![];
        let mut last_t = None;
        for (t_ms, level) in levels {
            last_t = Some(t_ms);
            if samples.last().is_none_or(|s| s.level != level) {
                samples.push(Sample { t_ms, level });
            }
        }
        if let (Some(t), Some(s)) = (last_t, samples.last()) {
            if s.t_ms < t {
                samples.push(Sample { t_ms: t, level: s.level });
            }
        }
        Waveform { samples, half_bit_ms }
    }

    pub fn end_ms(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t_ms)
    }

    pub fn level_at(&self, t_ms: f64) -> bool {
        let i = self.samples.partition_point(|s| s.t_ms <= t_ms);
        i > 0 && self.samples[i - 1].level
    }

    /// Times where the level changes, with the new level. A waveform that
    /// starts high counts as rising at its first sample.
    pub fn edges(&self) -> Vec<(f64, bool)> {
        let mut out = vec![];
        let mut prev = false;
        for s in &self.samples {
            if s.level != prev {
                out.push((s.t_ms, s.level));
                prev = s.level;
            }
        }
        out
    }

    /// Shift every edge independently by a uniform offset in
    /// `+-fraction * half_bit`, keeping edges ordered.
    pub fn with_edge_jitter<R: Rng + ?Sized>(&self, fraction: f64, half_bit_ms: f64, rng: &mut R) -> Waveform {
        let n = self.samples.len();
        let mut samples = self.samples.clone();
        let mut floor = f64::MIN;
        for (i, s) in samples.iter_mut().enumerate() {
            if i + 1 < n && fraction > 0.0 {
                s.t_ms += rng.gen_range(-fraction..=fraction) * half_bit_ms;
            }
            s.t_ms = s.t_ms.max(floor);
            floor = s.t_ms;
        }
        Waveform { samples, half_bit_ms: self.half_bit_ms }
    }

    /// Two-column text: `t_ms level` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(h) = self.half_bit_ms {
            out.push_str(&format!("# half_bit_ms {h}\n"));
        }
        for s in &self.samples {
            out.push_str(&format!("{} {}\n", s.t_ms, s.level as u8));
        }
        out
    }
}

impl FromStr for Waveform {
    type Err = LinkError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut half_bit_ms = None;
        let mut samples = vec![];
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |msg: &str| LinkError::Parse { line: i + 1, msg: msg.to_string() };
            if let Some(rest) = line.strip_prefix("# half_bit_ms") {
                half_bit_ms = Some(rest.trim().parse().map_err(|_| err("bad half_bit_ms"))?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let t_ms: f64 = cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| err("bad time"))?;
            let level = match cols.next() {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(err("level must be 0 or 1")),
            };
            samples.push(Sample { t_ms, level });
        }
        Ok(Waveform { samples, half_bit_ms })
    }
}

/// Half-bit sequence of a frame including the preamble.
pub fn frame_half_bits(frame: &OpticalFrame, convention: Convention) -> Vec<bool> {
    let mut halves = PREAMBLE.to_vec();
    for bit in frame.bits() {
        halves.extend(convention.halves(bit));
    }
    halves
}

/// Manchester-encode a frame starting at `t = 0`; the line returns low after the frame.
pub fn manchester_encode(
    frame: &OpticalFrame,
    half_bit_ms: f64,
    convention: Convention,
) -> Result<Waveform, LinkError> {
    if half_bit_ms.is_nan() || half_bit_ms <= 0.0 {
        return Err(LinkError::InvalidParameter(half_bit_ms));
    }
    let halves = frame_half_bits(frame, convention);
    let n = halves.len();
    let levels = halves
        .into_iter()
        .enumerate()
        .map(|(i, l)| (i as f64 * half_bit_ms, l))
        .chain(std::iter::once((n as f64 * half_bit_ms, false)));
    let mut w = Waveform::from_levels(levels, Some(half_bit_ms));
    // Mark the end explicitly so the trailing low has a duration.
    w.samples.push(Sample { t_ms: (n + 4) as f64 * half_bit_ms, level: false });
    Ok(w)
}

/// Recover the clock from the preamble and decode the first frame found.
pub fn manchester_decode(waveform: &Waveform, convention: Convention) -> Result<OpticalFrame, LinkError> {
    let edges = waveform.edges();
    let mut first_err = None;
    for i in 0..edges.len() {
        let Some((start, period)) = match_preamble(&edges, i) else { continue };
        match decode_data(waveform, &edges, start, period, convention) {
            Ok(bits) => return OpticalFrame::from_bits(&bits),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or(LinkError::NoFrame))
}

/// Checks for a preamble whose first rising edge is `edges[i]`; returns the
/// recovered data start time and half-bit period.
fn match_preamble(edges: &[(f64, bool)], i: usize) -> Option<(f64, f64)> {
    let n = PREAMBLE_TRAINING;
    if !edges[i].1 || i + n >= edges.len() {
        return None;
    }
    let t = |k: usize| edges[i + k].0;
    let rough = (t(n - 1) - t(0)) / (n - 1) as f64;
    if rough <= 0.0 {
        return None;
    }
    // Training intervals are one half-bit; the boundary to a full bit sits
    // halfway, which leaves room for jitter on both edges plus detector lag.
    let ok = (0..n - 1).all(|k| {
        let d = t(k + 1) - t(k);
        d > 0.5 * rough && d < 1.5 * rough
    });
    let marker = t(n) - t(n - 1);
    if !ok || marker < 2.5 * rough || marker > 4.5 * rough {
        return None;
    }
    // Least-squares line through the training edges.
    let kmean = (n - 1) as f64 / 2.0;
    let tmean = (0..n).map(t).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for k in 0..n {
        let dk = k as f64 - kmean;
        sxy += dk * (t(k) - tmean);
        sxx += dk * dk;
    }
    let period = sxy / sxx;
    let origin = tmean - period * kmean;
    Some((origin + PREAMBLE.len() as f64 * period, period))
}

fn decode_data(
    waveform: &Waveform,
    edges: &[(f64, bool)],
    start: f64,
    mut period: f64,
    convention: Convention,
) -> Result<Vec<bool>, LinkError> {
    let nominal = period;
    let mut boundary = start;
    let mut halves = Vec::with_capacity(2 * FRAME_BITS);
    for _ in 0..2 * FRAME_BITS {
        let idx = edges.partition_point(|e| e.0 < boundary);
        let nearest = [idx.checked_sub(1), Some(idx)]
            .into_iter()
            .flatten()
            .filter_map(|j| edges.get(j))
            .map(|e| e.0 - boundary)
            .filter(|d| d.abs() < 2.0 * EDGE_TOLERANCE * period)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()));
        if let Some(err) = nearest {
            boundary += PLL_PHASE_GAIN * err;
            period = (period + PLL_FREQ_GAIN * err).clamp(0.8 * nominal, 1.2 * nominal);
        }
        let mid = boundary + 0.5 * period;
        if mid > waveform.end_ms() {
            return Err(LinkError::Truncated);
        }
        halves.push(waveform.level_at(mid));
        boundary += period;
    }
    halves
        .chunks(2)
        .enumerate()
        .map(|(bit, pair)| convention.bit(pair[0], pair[1]).ok_or(LinkError::Framing { bit }))
        .collect()
}

/// Binarise a sampled analog trace `(t_ms, volts)` with the comparator.
pub fn pd_samples_to_levels(trace: &[(f64, f64)], comparator: &Comparator) -> Waveform {
    let mut level = false;
    Waveform::from_levels(
        trace.iter().map(|&(t, v)| {
            level = comparator.step(v, level);
            (t, level)
        }),
        None,
    )
}

/// Photodetector output for a light waveform: line high adds `led_suns` to
/// the `ambient_suns` floor. Sampled every `dt_us`.
pub fn photodiode_trace(
    waveform: &Waveform,
    transient: &mut PdTransient,
    response: impl Fn(f64) -> f64,
    ambient_suns: f64,
    led_suns: f64,
    dt_us: f64,
) -> Vec<(f64, f64)> {
    let dt_ms = dt_us / 1000.0;
    let steps = (waveform.end_ms() / dt_ms).floor() as usize;
    let (dark, lit) = (response(ambient_suns), response(ambient_suns + led_suns));
    (0..=steps)
        .map(|k| {
            let t = k as f64 * dt_ms;
            let target = if waveform.level_at(t) { lit } else { dark };
            (t, transient.step(target, dt_us))
        })
        .collect()
}

/// Incremental receiver fed one `Din` sample per tick. A buffered burst is
/// decoded once the line has idled low for `idle_ms`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub convention: Convention,
    pub idle_ms: f64,
    buffer: Vec<Sample>,
    last_edge_ms: f64,
    level: bool,
}

impl Receiver {
    const MAX_SAMPLES: usize = 1024;

    pub fn new(convention: Convention, idle_ms: f64) -> Self {
        Receiver { convention, idle_ms, buffer: vec![], last_edge_ms: 0.0, level: false }
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.level = false;
    }

    /// Returns a decode attempt when a burst completes. Bursts without a
    /// preamble (slow light changes) are dropped silently.
    pub fn push(&mut self, t_ms: f64, din: bool) -> Option<Result<OpticalFrame, LinkError>> {
        if din != self.level {
            self.level = din;
            self.last_edge_ms = t_ms;
            if din || !self.buffer.is_empty() {
                self.buffer.push(Sample { t_ms, level: din });
            }
            if self.buffer.len() > Self::MAX_SAMPLES {
                self.buffer.drain(..Self::MAX_SAMPLES / 2);
            }
            return None;
        }
        if din || self.buffer.is_empty() || t_ms - self.last_edge_ms < self.idle_ms {
            return None;
        }
        let mut samples = std::mem::take(&mut self.buffer);
        samples.push(Sample { t_ms, level: false });
        match manchester_decode(&Waveform { samples, half_bit_ms: None }, self.convention) {
            Err(LinkError::NoFrame) => None,
            other => Some(other),
        }
    }
}

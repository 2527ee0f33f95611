//! Run metrics recomputed from an event log alone.

use serde::{Deserialize, Serialize};

use crate::world::eventlog::{EventKind, EventLog, EventRecord};
use crate::world::robot::normalize_deg;

/// Ticks skipped at the start of a phase before its direction is measured,
/// so rotation and velocity transients have settled.
pub const SETTLE_TICKS: u64 = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegment {
    /// 0 when halted.
    pub phase: u8,
    pub start_tick: u64,
    pub end_tick: u64,
    pub mean_speed_mm_s: f64,
    /// Speed after the settling window.
    pub steady_speed_mm_s: f64,
    /// Direction of travel after settling, degrees; absent when stationary.
    pub direction_deg: Option<f64>,
    pub lifts: u32,
    pub tilt_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DockSummary {
    pub tick: u64,
    pub other: u64,
    pub offset_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSummary {
    pub robot: usize,
    pub mean_speed_mm_s: f64,
    pub phases: Vec<PhaseSegment>,
    /// Signed change of travel direction at each phase transition.
    pub turns_deg: Vec<f64>,
    /// Direction of each moving phase as `+x`, `-x`, `+y` or `-y`.
    pub headings: Vec<String>,
    pub docks: Vec<DockSummary>,
    pub undocks: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ticks: u64,
    /// Filled by the caller; ignored by log verification.
    pub wall_time_s: Option<f64>,
    pub robots: Vec<RobotSummary>,
}

pub fn cardinal(deg: f64) -> &'static str {
    match normalize_deg(deg) {
        d if (-45.0..45.0).contains(&d) => "+x",
        d if (45.0..135.0).contains(&d) => "+y",
        d if (-135.0..-45.0).contains(&d) => "-y",
        _ => "-x",
    }
}

fn pose(r: &EventRecord) -> Option<(u64, f64, f64)> {
    let p = &r.payload;
    Some((r.tick, p.get("x")?.as_f64()?, p.get("y")?.as_f64()?))
}

fn travel(poses: &[(u64, f64, f64)], from: u64, to: u64) -> Option<(f64, f64, f64)> {
    let first = poses.iter().find(|p| p.0 >= from)?;
    let last = poses.iter().rev().find(|p| p.0 <= to)?;
    if last.0 <= first.0 {
        return None;
    }
    let (dx, dy) = (last.1 - first.1, last.2 - first.2);
    Some((dx, dy, (last.0 - first.0) as f64 / 1000.0))
}

impl RunSummary {
    pub fn from_log(log: &EventLog, ticks: u64) -> Self {
        let mut ids: Vec<usize> = log.records.iter().filter_map(|r| r.robot).collect();
        ids.sort_unstable();
        ids.dedup();
        RunSummary { ticks, wall_time_s: None, robots: ids.into_iter().map(|id| robot_summary(log, id, ticks)).collect() }
    }
}

fn robot_summary(log: &EventLog, id: usize, ticks: u64) -> RobotSummary {
    let records: Vec<&EventRecord> = log.for_robot(id).collect();
    let poses: Vec<(u64, f64, f64)> = records.iter().filter(|r| r.kind == EventKind::Pose).filter_map(|r| pose(r)).collect();
    let first_phase = records
        .iter()
        .find(|r| r.kind == EventKind::Pose)
        .and_then(|r| r.payload.get("phase")?.as_u64())
        .unwrap_or(0) as u8;
    let mut bounds = vec![(0u64, first_phase)];
    for r in records.iter().filter(|r| r.kind == EventKind::PhaseTransition) {
        let to = r.payload.get("to").and_then(|v| v.as_u64()).unwrap_or(0) as u8;
        bounds.push((r.tick, to));
    }
    let mut phases = vec![];
    for (i, &(start, phase)) in bounds.iter().enumerate() {
        let end = bounds.get(i + 1).map_or(ticks.saturating_sub(1), |b| b.0);
        if end <= start {
            continue;
        }
        let speed = travel(&poses, start, end).map_or(0.0, |(dx, dy, t)| dx.hypot(dy) / t);
        let settled = if end - start > 2 * SETTLE_TICKS { start + SETTLE_TICKS } else { start };
        let steady = travel(&poses, settled, end);
        let steady_speed_mm_s = steady.map_or(0.0, |(dx, dy, t)| dx.hypot(dy) / t);
        let direction_deg = steady
            .filter(|(dx, dy, _)| dx.hypot(*dy) > 0.05)
            .map(|(dx, dy, _)| dy.atan2(dx).to_degrees());
        let lift_ticks: Vec<u64> = records
            .iter()
            .filter(|r| r.kind == EventKind::Bubble && (start..end).contains(&r.tick))
            .filter(|r| r.payload.get("event").and_then(|e| e.as_str()) == Some("lift"))
            .map(|r| r.tick)
            .collect();
        // Cycle rate from the spacing of lifts inside the phase.
        let tilt_hz = match (lift_ticks.first(), lift_ticks.last()) {
            (Some(a), Some(b)) if b > a => (lift_ticks.len() - 1) as f64 * 1000.0 / (b - a) as f64,
            _ => 0.0,
        };
        phases.push(PhaseSegment {
            phase,
            start_tick: start,
            end_tick: end,
            mean_speed_mm_s: speed,
            steady_speed_mm_s,
            direction_deg,
            lifts: lift_ticks.len() as u32,
            tilt_hz,
        });
    }
    let moving: Vec<f64> = phases.iter().filter(|p| p.phase != 0).filter_map(|p| p.direction_deg).collect();
    let turns_deg = moving.windows(2).map(|w| normalize_deg(w[1] - w[0])).collect();
    let headings = moving.iter().map(|d| cardinal(*d).to_string()).collect();
    let mean_speed_mm_s = travel(&poses, 0, ticks).map_or(0.0, |(dx, dy, t)| dx.hypot(dy) / t);
    let docks = records
        .iter()
        .filter(|r| r.kind == EventKind::Dock)
        .map(|r| DockSummary {
            tick: r.tick,
            other: r.payload.get("other").and_then(|v| v.as_u64()).unwrap_or(0),
            offset_mm: r.payload.get("offset").and_then(|v| v.as_f64()).unwrap_or(0.0),
        })
        .collect();
    let undocks = records.iter().filter(|r| r.kind == EventKind::Undock).map(|r| r.tick).collect();
    RobotSummary { robot: id, mean_speed_mm_s, phases, turns_deg, headings, docks, undocks }
}

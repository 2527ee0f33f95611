//! The arena: light fields, robots, docking, collisions and the tick loop.
//!
//! Each tick runs, in order: light and Din sensing, optical decoding, the
//! controller, bubbles, locomotion (all per robot, optionally in parallel),
//! then docking and collision resolution and event emission (serial).

pub mod collision;
pub mod docking;
pub mod eventlog;
pub mod light;
pub mod robot;
pub mod scenario;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optical_link::{manchester_encode, LinkError, OpticalFrame, Waveform};
use crate::photosensor::Comparator;

use collision::Square;
use docking::{docking_interaction, equilibrium_offset, DockLink};
use eventlog::{EventKind, EventLog, EventRecord, Payload};
use light::{power_gate, LightField};
use robot::{normalize_deg, Robot, TickContext};
use scenario::{Laser, LightZone, ScenarioError, TimedCommand, WorldCommand, WorldScenario};

pub use robot::Tilt;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("non-finite state in robot {robot} at tick {tick}")]
    NonFinite { tick: u64, robot: usize },
    #[error("unknown robot {0}")]
    UnknownRobot(usize),
    #[error("unknown zone {0}")]
    UnknownZone(u32),
    #[error("position ({0}, {1}) outside the arena")]
    OutOfArena(f64, f64),
    #[error("bad frame: {0}")]
    Frame(#[from] LinkError),
}

/// Din comparator operating points: ambient vs ambient plus one 5-sun source.
const COMPARATOR_SUNS: (f64, f64) = (1.0, 6.0);
/// Slack on the broad phase for motion within one resolve pass.
const BROAD_MARGIN_MM: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSnapshot {
    pub id: usize,
    pub x_mm: f64,
    pub y_mm: f64,
    pub heading_deg: f64,
    pub tilt_deg: f64,
    pub tilted_face: Option<usize>,
    pub phase: u8,
    pub act: u8,
    pub din: bool,
    pub powered: bool,
    pub fill: [f64; 4],
    pub bubble_counts: [u32; 4],
    pub lingering_bubbles: u32,
    pub docked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub robots: Vec<RobotSnapshot>,
    pub links: Vec<DockLink>,
    pub laser: Laser,
    pub zones: Vec<LightZone>,
    pub led_on: bool,
}

#[derive(Clone, Copy, Debug)]
struct Facing {
    face_a: usize,
    face_b: usize,
    normal: [f64; 2],
    tangent: [f64; 2],
    gap: f64,
    offset: f64,
}

pub struct World {
    scenario: WorldScenario,
    tick: u64,
    light: LightField,
    robots: Vec<Robot>,
    links: Vec<DockLink>,
    led_queue: Vec<(u64, Waveform)>,
    led_rng: ChaCha8Rng,
    comparator: Comparator,
    next_command: usize,
    parallel: bool,
}

fn unit(deg: f64) -> [f64; 2] {
    let (s, c) = deg.to_radians().sin_cos();
    [c, s]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl World {
    pub fn new(scenario: &WorldScenario) -> Result<Self, WorldError> {
        scenario.validate()?;
        let mut scenario = scenario.clone();
        scenario.physics.fluid.film_depth_um = scenario.film_depth_um;
        // Stable sort keeps file order within a tick.
        scenario.commands.sort_by_key(|c| c.tick);
        let light = LightField { ambient_suns: scenario.ambient_suns, zones: scenario.zones.clone(), laser: scenario.laser };
        let mut robots = vec![];
        for (i, spec) in scenario.robots.iter().enumerate() {
            let steady = light.intensity_at(spec.x_mm, spec.y_mm, scenario.physics.photodiode.face_normal, 0);
            let powered = power_gate(steady, scenario.power_threshold_suns);
            let program = spec.parsed_program().map_err(|source| ScenarioError::Program { robot: i, source })?;
            let mut r = Robot::new(i, spec, program, scenario.seed, &scenario.physics, scenario.led.half_bit_ms, powered);
            r.set_convention(scenario.led.convention);
            robots.push(r);
        }
        let pd = &scenario.physics.photodiode;
        let comparator = pd.comparator_between(COMPARATOR_SUNS.0, COMPARATOR_SUNS.1);
        let mut led_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        led_rng.set_stream(u64::MAX);
        Ok(World {
            light,
            robots,
            links: vec![],
            led_queue: vec![],
            led_rng,
            comparator,
            next_command: 0,
            parallel: cfg!(feature = "parallel"),
            tick: 0,
            scenario,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, WorldError> {
        World::new(&WorldScenario::from_toml(text)?)
    }

    pub fn scenario(&self) -> &WorldScenario {
        &self.scenario
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn robots(&self) -> &[Robot] {
        &self.robots
    }

    pub fn links(&self) -> &[DockLink] {
        &self.links
    }

    pub fn light(&self) -> &LightField {
        &self.light
    }

    /// Step robots in parallel when built with the `parallel` feature.
    /// Results are identical either way.
    pub fn set_parallel(&mut self, on: bool) {
        self.parallel = on && cfg!(feature = "parallel");
    }

    /// Apply an external command at the current tick boundary.
    pub fn apply(&mut self, command: &WorldCommand) -> Result<(), WorldError> {
        match command {
            WorldCommand::MoveLaser { x_mm, y_mm, on } => {
                if !self.scenario.arena.contains(*x_mm, *y_mm) {
                    return Err(WorldError::OutOfArena(*x_mm, *y_mm));
                }
                self.light.laser.x_mm = *x_mm;
                self.light.laser.y_mm = *y_mm;
                self.light.laser.on = *on;
            }
            WorldCommand::ToggleZone { id } => {
                let zone = self.light.zone_mut(*id).ok_or(WorldError::UnknownZone(*id))?;
                zone.enabled = !zone.enabled;
            }
            WorldCommand::EmitFrame { frame } => {
                let frame = OpticalFrame::from_hex(frame)?;
                let led = self.scenario.led;
                let mut w = manchester_encode(&frame, led.half_bit_ms, led.convention)?;
                if led.jitter > 0.0 {
                    w = w.with_edge_jitter(led.jitter, led.half_bit_ms, &mut self.led_rng);
                }
                self.led_queue.push((self.tick, w));
            }
            WorldCommand::PlaceRobot { robot, x_mm, y_mm, heading_deg } => {
                if !self.scenario.arena.contains(*x_mm, *y_mm) {
                    return Err(WorldError::OutOfArena(*x_mm, *y_mm));
                }
                if *robot >= self.robots.len() {
                    return Err(WorldError::UnknownRobot(*robot));
                }
                self.links.retain(|l| !l.involves(*robot));
                let r = &mut self.robots[*robot];
                r.x_mm = *x_mm;
                r.y_mm = *y_mm;
                r.heading_deg = normalize_deg(*heading_deg);
            }
        }
        Ok(())
    }

    fn led_on(&self) -> bool {
        self.led_queue.iter().any(|(start, w)| w.level_at((self.tick - start) as f64))
    }

    /// Advance one tick and return its records.
    pub fn step(&mut self) -> Result<Vec<EventRecord>, WorldError> {
        while let Some(TimedCommand { tick, command }) = self.scenario.commands.get(self.next_command) {
            if *tick > self.tick {
                break;
            }
            let command = command.clone();
            self.next_command += 1;
            if let Err(e) = self.apply(&command) {
                log::warn!("tick {}: scripted command rejected: {e}", self.tick);
            }
        }
        let led_suns = if self.led_on() { self.scenario.led.intensity_suns } else { 0.0 };
        let ctx = TickContext {
            tick: self.tick,
            light: &self.light,
            led_suns,
            physics: &self.scenario.physics,
            comparator: self.comparator,
            power_threshold: self.scenario.power_threshold_suns,
        };
        let per_robot = advance_all(&mut self.robots, &ctx, self.parallel);
        let mut events: Vec<EventRecord> = per_robot.into_iter().flatten().collect();
        self.resolve(&mut events);
        for r in &self.robots {
            if !r.is_finite() {
                return Err(WorldError::NonFinite { tick: self.tick, robot: r.id });
            }
        }
        if self.tick % self.scenario.pose_every == 0 {
            for r in &self.robots {
                let p = Payload::new()
                    .num("x", r.x_mm)
                    .num("y", r.y_mm)
                    .num("heading", r.heading_deg)
                    .num("tilt", r.tilt_deg())
                    .int("phase", r.controller.phase.number() as i64);
                events.push(EventRecord::new(self.tick, Some(r.id), EventKind::Pose, p));
            }
        }
        let now = self.tick;
        self.led_queue.retain(|(start, w)| ((now - start) as f64) <= w.end_ms());
        self.tick += 1;
        Ok(events)
    }

    pub fn run(&mut self, ticks: u64) -> Result<EventLog, WorldError> {
        let mut log = EventLog::default();
        for _ in 0..ticks {
            log.extend(self.step()?);
        }
        Ok(log)
    }

    fn group_of(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.robots.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for l in &self.links {
            let (a, b) = (find(&mut parent, l.robots[0]), find(&mut parent, l.robots[1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        (0..self.robots.len()).map(|i| find(&mut parent, i)).collect()
    }

    fn facing(&self, a: usize, b: usize) -> Option<Facing> {
        let (ra, rb) = (&self.robots[a], &self.robots[b]);
        let d = [rb.x_mm - ra.x_mm, rb.y_mm - ra.y_mm];
        let best = |r: &Robot, dir: [f64; 2]| {
            (0..4)
                .map(|f| (f, unit(r.face_angle_deg(f))))
                .max_by(|x, y| dot(x.1, dir).total_cmp(&dot(y.1, dir)))
                .unwrap()
        };
        let (face_a, normal) = best(ra, d);
        let (face_b, nb) = best(rb, [-d[0], -d[1]]);
        if -dot(normal, nb) < self.scenario.physics.docking.facing_cos {
            return None;
        }
        let half = 0.5 * (ra.body.edge_mm + rb.body.edge_mm);
        let tangent = [-normal[1], normal[0]];
        let offset = dot(d, tangent);
        (offset.abs() < half).then_some(Facing { face_a, face_b, normal, tangent, gap: dot(d, normal) - half, offset })
    }

    fn edge(&self, a: usize, b: usize) -> f64 {
        self.robots[a].body.edge_mm.min(self.robots[b].body.edge_mm)
    }

    /// Docking forces, rigid groups, collisions, bounds and new links.
    fn resolve(&mut self, events: &mut Vec<EventRecord>) {
        let tick = self.tick;
        let n = self.robots.len();
        let params = self.scenario.physics.docking;
        let dt = 1e-3;

        // Links break when the members drive apart harder than the bond holds.
        let mut kept = vec![];
        for l in std::mem::take(&mut self.links) {
            let [a, b] = l.robots;
            let normal = unit(self.robots[a].face_angle_deg(l.faces[0]));
            let pa = self.robots[a].proposed;
            let pb = self.robots[b].proposed;
            let separating = dot([pb[0] - pa[0], pb[1] - pa[1]], normal) / dt;
            if separating * params.friction > l.bond_un {
                let p = Payload::new().int("other", b as i64).num("drive_un", separating * params.friction);
                events.push(EventRecord::new(tick, Some(a), EventKind::Undock, p));
            } else {
                kept.push(l);
            }
        }
        self.links = kept;

        let group = self.group_of();
        let linked = |links: &[DockLink], a: usize, b: usize| {
            links.iter().any(|l| l.involves(a) && l.involves(b))
        };
        let reach = params.range_mm;
        let pairs = self.candidate_pairs(reach + BROAD_MARGIN_MM);

        // Pair forces between faces that are not linked.
        for &(a, b) in &pairs {
            if group[a] == group[b] || !self.near(a, b, reach) {
                continue;
            }
            let Some(f) = self.facing(a, b) else { continue };
            let edge = self.edge(a, b);
            let (ca, cb) = (self.robots[a].coatings[f.face_a], self.robots[b].coatings[f.face_b]);
            let i = docking_interaction(&ca, &cb, f.gap, f.offset, edge, &params);
            if i.force_un == 0.0 && i.lateral_un == 0.0 {
                continue;
            }
            let fb = [
                -i.force_un * f.normal[0] + i.lateral_un * f.tangent[0],
                -i.force_un * f.normal[1] + i.lateral_un * f.tangent[1],
            ];
            let s = dt / params.friction;
            self.robots[b].proposed[0] += fb[0] * s;
            self.robots[b].proposed[1] += fb[1] * s;
            self.robots[a].proposed[0] -= fb[0] * s;
            self.robots[a].proposed[1] -= fb[1] * s;
        }

        // Rigid groups move with the mean drive of their members.
        let mut sums = vec![([0.0, 0.0], 0usize); n];
        for (i, r) in self.robots.iter().enumerate() {
            let s = &mut sums[group[i]];
            s.0[0] += r.proposed[0];
            s.0[1] += r.proposed[1];
            s.1 += 1;
        }
        for (i, r) in self.robots.iter_mut().enumerate() {
            let (s, c) = sums[group[i]];
            r.x_mm += s[0] / c as f64;
            r.y_mm += s[1] / c as f64;
            r.docked = c > 1;
        }

        self.separate(&group, &pairs);

        // Keep every group inside the arena.
        let arena = self.scenario.arena;
        let mut shifts = vec![[0.0f64; 2]; n];
        for r in &self.robots {
            let h = 0.5 * r.body.edge_mm;
            let c = [r.x_mm.clamp(h, arena.width_mm - h) - r.x_mm, r.y_mm.clamp(h, arena.height_mm - h) - r.y_mm];
            let shift = &mut shifts[group[r.id]];
            for k in 0..2 {
                if c[k].abs() > shift[k].abs() {
                    shift[k] = c[k];
                }
            }
        }
        for r in &mut self.robots {
            let shift = shifts[group[r.id]];
            r.x_mm += shift[0];
            r.y_mm += shift[1];
        }

        // New links at contact with net attraction.
        let mut group = group;
        let mut formed = false;
        for &(a, b) in &pairs {
            if group[a] == group[b] || linked(&self.links, a, b) || !self.near(a, b, reach) {
                continue;
            }
            let Some(f) = self.facing(a, b) else { continue };
            let edge = self.edge(a, b);
            let (ca, cb) = (self.robots[a].coatings[f.face_a], self.robots[b].coatings[f.face_b]);
            if !docking_interaction(&ca, &cb, f.gap, f.offset, edge, &params).dock {
                continue;
            }
            let offset = equilibrium_offset(&ca, &cb, edge, f.offset, &params);
            self.snap(a, b, &f, offset, &group);
            let link = DockLink::new([a, b], [f.face_a, f.face_b], [&ca, &cb], offset, edge, &params);
            let p = Payload::new()
                .int("other", b as i64)
                .int("face", f.face_a as i64)
                .int("other_face", f.face_b as i64)
                .num("offset", offset)
                .num("bond_un", link.bond_un);
            events.push(EventRecord::new(tick, Some(a), EventKind::Dock, p));
            self.links.push(link);
            self.robots[a].docked = true;
            self.robots[b].docked = true;
            group = self.group_of();
            formed = true;
        }
        // A snap can land a group on a third robot.
        if formed {
            self.separate(&group, &pairs);
        }
    }

    /// Index pairs `(a, b)`, `a < b`, whose centres lie within the
    /// circumscribed radii plus `margin` on both axes, in ascending order so
    /// the result matches a plain double loop. Sort and sweep along x.
    fn candidate_pairs(&self, margin: f64) -> Vec<(usize, usize)> {
        let max_edge = self.robots.iter().map(|r| r.body.edge_mm).fold(0.0, f64::max);
        let cutoff = std::f64::consts::SQRT_2 * max_edge + margin;
        let mut order: Vec<usize> = (0..self.robots.len()).collect();
        order.sort_by(|&i, &j| self.robots[i].x_mm.total_cmp(&self.robots[j].x_mm).then(i.cmp(&j)));
        let mut pairs = vec![];
        for (k, &i) in order.iter().enumerate() {
            let ri = &self.robots[i];
            for &j in &order[k + 1..] {
                let rj = &self.robots[j];
                if rj.x_mm - ri.x_mm > cutoff {
                    break;
                }
                if (rj.y_mm - ri.y_mm).abs() <= cutoff {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Push overlapping groups apart.
    fn separate(&mut self, group: &[usize], pairs: &[(usize, usize)]) {
        for _ in 0..4 {
            let mut moved = false;
            for &(a, b) in pairs {
                if group[a] == group[b] || !self.near(a, b, 0.0) {
                    continue;
                }
                let Some((normal, depth)) = collision::overlap(&self.square(a), &self.square(b)) else { continue };
                let h = 0.5 * depth;
                self.shift_group(group, group[a], [-normal[0] * h, -normal[1] * h]);
                self.shift_group(group, group[b], [normal[0] * h, normal[1] * h]);
                moved = true;
            }
            if !moved {
                break;
            }
        }
    }

    /// Circumscribed circles closer than `margin`.
    fn near(&self, a: usize, b: usize, margin: f64) -> bool {
        let (ra, rb) = (&self.robots[a], &self.robots[b]);
        let reach = std::f64::consts::FRAC_1_SQRT_2 * (ra.body.edge_mm + rb.body.edge_mm) + margin;
        (rb.x_mm - ra.x_mm).hypot(rb.y_mm - ra.y_mm) <= reach
    }

    fn square(&self, i: usize) -> Square {
        let r = &self.robots[i];
        Square { center: [r.x_mm, r.y_mm], heading_deg: r.heading_deg, edge: r.body.edge_mm }
    }

    fn shift_group(&mut self, group: &[usize], g: usize, d: [f64; 2]) {
        for r in self.robots.iter_mut().filter(|r| group[r.id] == g) {
            r.x_mm += d[0];
            r.y_mm += d[1];
        }
    }

    /// Seat `b` flush against `a` at the link offset.
    fn snap(&mut self, a: usize, b: usize, f: &Facing, offset: f64, group: &[usize]) {
        let half = 0.5 * (self.robots[a].body.edge_mm + self.robots[b].body.edge_mm);
        let (ax, ay) = (self.robots[a].x_mm, self.robots[a].y_mm);
        let target = [
            ax + f.normal[0] * half + f.tangent[0] * offset,
            ay + f.normal[1] * half + f.tangent[1] * offset,
        ];
        let alone = group.iter().filter(|g| **g == group[b]).count() == 1;
        let rb = &self.robots[b];
        let delta = [target[0] - rb.x_mm, target[1] - rb.y_mm];
        if alone {
            let normal_deg = f.normal[1].atan2(f.normal[0]).to_degrees();
            let heading = normalize_deg(normal_deg + 180.0 - crate::locomotion::face_normal_deg(f.face_b));
            let rb = &mut self.robots[b];
            rb.x_mm = target[0];
            rb.y_mm = target[1];
            rb.heading_deg = heading;
        } else {
            self.shift_group(group, group[b], delta);
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let robots = self
            .robots
            .iter()
            .map(|r| {
                let edge = r.bubbles.edge_um;
                RobotSnapshot {
                    id: r.id,
                    x_mm: r.x_mm,
                    y_mm: r.y_mm,
                    heading_deg: r.heading_deg,
                    tilt_deg: r.tilt_deg(),
                    tilted_face: r.tilt.map(|t| t.face),
                    phase: r.controller.phase.number(),
                    act: r.act.bits(),
                    din: r.din,
                    powered: r.powered,
                    fill: r.bubbles.faces.map(|f| f.fill_fraction(edge)),
                    bubble_counts: r.bubbles.faces.map(|f| f.count),
                    lingering_bubbles: r.lingering(),
                    docked: r.docked,
                }
            })
            .collect();
        Snapshot {
            tick: self.tick,
            robots,
            links: self.links.clone(),
            laser: self.light.laser,
            zones: self.light.zones.clone(),
            led_on: self.led_on(),
        }
    }
}

#[cfg(feature = "parallel")]
fn advance_all(robots: &mut [Robot], ctx: &TickContext, parallel: bool) -> Vec<Vec<EventRecord>> {
    use rayon::prelude::*;
    if parallel {
        robots.par_iter_mut().map(|r| r.advance(ctx)).collect()
    } else {
        robots.iter_mut().map(|r| r.advance(ctx)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn advance_all(robots: &mut [Robot], ctx: &TickContext, _parallel: bool) -> Vec<Vec<EventRecord>> {
    robots.iter_mut().map(|r| r.advance(ctx)).collect()
}

/// Run a scenario for `ticks` from a fresh world.
pub fn run_scenario(scenario: &WorldScenario, ticks: u64) -> Result<EventLog, WorldError> {
    World::new(scenario)?.run(ticks)
}

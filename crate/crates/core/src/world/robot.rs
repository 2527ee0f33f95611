//! Per-robot part of a tick: light, Din, controller, bubbles and ratchet.
//! Robots do not read each other here, so this part may run in parallel.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bubble_dynamics::{BubbleInventory, FACE_COUNT, PACKING_LIMIT};
use crate::lablet_vm::{decode_run_command, ActMask, ControllerState, LabletProgram, ACTUATOR_COUNT};
use crate::locomotion::{
    face_normal_deg, net_gravity, switch_rotation, tilt_decision, RatchetDrive, RotationImpulse, SmartletBody,
};
use crate::optical_link::{Command, OpticalFrame, Receiver};
use crate::photosensor::{angular_kernel, incidence_angle_deg, Comparator, PdTransient};

use super::docking::FaceCoating;
use super::eventlog::{EventKind, EventRecord, Payload};
use super::light::{power_gate, LightField, DOWN};
use super::scenario::{Physics, RobotSpec};

const DT_S: f64 = 1e-3;
const DT_US: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tilt {
    pub face: usize,
    pub angle_deg: f64,
    since_release_ms: u32,
}

pub(crate) struct TickContext<'a> {
    pub tick: u64,
    pub light: &'a LightField,
    pub led_suns: f64,
    pub physics: &'a Physics,
    pub comparator: Comparator,
    pub power_threshold: f64,
}

#[derive(Clone, Debug)]
pub struct Robot {
    pub id: usize,
    pub body: SmartletBody,
    pub x_mm: f64,
    pub y_mm: f64,
    pub heading_deg: f64,
    pub coatings: [FaceCoating; FACE_COUNT],
    pub actuator_faces: [usize; ACTUATOR_COUNT],
    pub program: Option<LabletProgram>,
    pub controller: ControllerState,
    pub powered: bool,
    pub din: bool,
    pub act: ActMask,
    pub bubbles: BubbleInventory,
    pub tilt: Option<Tilt>,
    pub docked: bool,
    /// Released bubbles still on the glass: (expiry tick, count).
    pub released: VecDeque<(u64, u32)>,
    pd: PdTransient,
    receiver: Receiver,
    drive: RatchetDrive,
    rotation: Option<RotationImpulse>,
    drive_face: Option<usize>,
    rng: ChaCha8Rng,
    pub(crate) proposed: [f64; 2],
}

pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r > 180.0 { r - 360.0 } else { r }
}

impl Robot {
    pub(crate) fn new(id: usize, spec: &RobotSpec, program: Option<LabletProgram>, seed: u64, physics: &Physics, half_bit_ms: f64, powered: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let running = spec.running.unwrap_or(program.is_some()) && program.is_some() && powered;
        let pd_model = &physics.photodiode;
        let dark = pd_model.output_for(0.0, pd_model.bias_v);
        Robot {
            id,
            body: spec.body,
            x_mm: spec.x_mm,
            y_mm: spec.y_mm,
            heading_deg: normalize_deg(spec.heading_deg),
            coatings: spec.coatings,
            actuator_faces: spec.actuator_faces,
            program,
            controller: if running { ControllerState::running() } else { ControllerState::halted() },
            powered,
            din: false,
            act: ActMask::NONE,
            bubbles: BubbleInventory::new(spec.body.edge_mm * 1000.0),
            tilt: None,
            docked: false,
            released: VecDeque::new(),
            pd: pd_model.transient(dark),
            receiver: Receiver::new(Default::default(), 5.0 * half_bit_ms),
            drive: RatchetDrive::default(),
            rotation: None,
            drive_face: None,
            rng,
            proposed: [0.0; 2],
        }
    }

    pub(crate) fn set_convention(&mut self, convention: crate::optical_link::Convention) {
        self.receiver.convention = convention;
    }

    /// World-frame outward normal of a vertical face, degrees.
    pub fn face_angle_deg(&self, face: usize) -> f64 {
        normalize_deg(self.heading_deg + face_normal_deg(face))
    }

    pub fn lingering(&self) -> u32 {
        self.released.iter().map(|r| r.1).sum()
    }

    pub fn speed_mm_s(&self) -> f64 {
        self.drive.speed()
    }

    fn event(&self, out: &mut Vec<EventRecord>, tick: u64, kind: EventKind, payload: Payload) {
        out.push(EventRecord::new(tick, Some(self.id), kind, payload));
    }

    pub(crate) fn advance(&mut self, ctx: &TickContext) -> Vec<EventRecord> {
        let mut ev = vec![];
        self.sense(ctx, &mut ev);
        self.control(ctx, &mut ev);
        self.bubbles_and_tilt(ctx, &mut ev);
        self.move_body(ctx);
        ev
    }

    fn sense(&mut self, ctx: &TickContext, ev: &mut Vec<EventRecord>) {
        let tick = ctx.tick;
        let model = &ctx.physics.photodiode;
        let k = angular_kernel(incidence_angle_deg(model.face_normal, DOWN));
        let steady = ctx.light.intensity_at(self.x_mm, self.y_mm, model.face_normal, tick);
        // The LED flicker carries data and is too brief to power the cell.
        let powered = power_gate(steady, ctx.power_threshold);
        if powered != self.powered {
            self.powered = powered;
            if !powered {
                self.controller = ControllerState::halted();
                self.receiver.reset();
            }
            self.event(ev, tick, EventKind::Power, Payload::new().flag("powered", powered));
        }
        let suns = steady + k * ctx.led_suns;
        let v = self.pd.step(model.output_for(suns, model.bias_v), DT_US);
        let din = powered && ctx.comparator.step(v, self.din);
        if din != self.din {
            self.din = din;
            self.event(ev, tick, EventKind::Din, Payload::new().int("value", din as i64));
        }
        if powered {
            if let Some(result) = self.receiver.push(tick as f64, din) {
                self.handle_frame(tick, result, ev);
            }
        }
    }

    fn handle_frame(&mut self, tick: u64, result: Result<OpticalFrame, crate::optical_link::LinkError>, ev: &mut Vec<EventRecord>) {
        let frame = match result {
            Ok(f) => f,
            Err(e) => {
                let p = Payload::new().flag("accepted", false).text("error", e.to_string());
                self.event(ev, tick, EventKind::FrameRx, p);
                return;
            }
        };
        let mut p = Payload::new().text("frame", frame.to_hex()).int("command", frame.command as i64);
        let accepted = match frame.command() {
            Command::Load => match decode_run_command(frame.payload) {
                Ok(program) => {
                    self.program = Some(program);
                    self.controller = ControllerState::halted();
                    true
                }
                Err(e) => {
                    p = p.text("error", e.to_string());
                    false
                }
            },
            Command::Run => {
                if self.program.is_some() {
                    self.controller = ControllerState::running();
                }
                self.program.is_some()
            }
            Command::Halt => {
                self.controller = ControllerState::halted();
                true
            }
            Command::Reset => {
                self.program = None;
                self.controller = ControllerState::halted();
                true
            }
            Command::Reserved(_) => false,
        };
        self.event(ev, tick, EventKind::FrameRx, p.flag("accepted", accepted));
    }

    fn control(&mut self, ctx: &TickContext, ev: &mut Vec<EventRecord>) {
        let act = match (&self.program, self.powered) {
            (Some(program), true) => {
                let out = self.controller.step(program, self.din);
                if let Some((from, to)) = out.transition {
                    let p = Payload::new().int("from", from.number() as i64).int("to", to.number() as i64);
                    self.event(ev, ctx.tick, EventKind::PhaseTransition, p);
                }
                out.act
            }
            _ => ActMask::NONE,
        };
        if act != self.act {
            self.act = act;
            self.event(ev, ctx.tick, EventKind::Act, Payload::new().int("bits", act.bits() as i64));
        }
    }

    /// Face driven by the first actuator of the current phase.
    fn current_drive_face(&self) -> Option<usize> {
        let program = self.program.as_ref()?;
        let cfg = program.phase(self.controller.phase)?;
        cfg.act_mask.active().next().map(|a| self.actuator_faces[a])
    }

    fn bubbles_and_tilt(&mut self, ctx: &TickContext, ev: &mut Vec<EventRecord>) {
        let tick = ctx.tick;
        let params = &ctx.physics.bubble;
        let loco = &ctx.physics.locomotion;
        for a in 0..ACTUATOR_COUNT {
            let high = self.act.is_active(a);
            let jitter = if high { self.rng.gen_range(-1.0..=1.0) } else { 0.0 };
            self.bubbles.nucleate(self.actuator_faces[a], high, DT_S, jitter, params);
        }
        if self.powered && self.act.bits() != 0 {
            let load_pa = net_gravity(&self.body, &ctx.physics.fluid).abs() / (self.body.edge_mm * self.body.edge_mm);
            for f in &self.bubbles.faces {
                debug_assert!(f.count == 0 || f.pressure_mbar(params.tension) * 100.0 > load_pa);
            }
        }

        if let Some(new) = self.current_drive_face() {
            if let Some(prev) = self.drive_face.filter(|p| *p != new) {
                let residual = self.bubbles.faces[prev].anchored && self.bubbles.faces[prev].count > 0;
                if let Some(kick) = switch_rotation(prev, new, residual, loco).filter(|_| !self.docked) {
                    if (loco.switch_rotation_deg).abs() >= params.detach_rotation_deg {
                        let face = &mut self.bubbles.faces[prev];
                        face.anchored = false;
                        if face.merge_round(params) {
                            self.bubble_event(ev, tick, prev, "coalesce");
                        }
                    }
                    self.rotation = Some(kick);
                }
            }
            self.drive_face = Some(new);
        }

        let edge_um = self.bubbles.edge_um;
        let bpr = params.bubbles_per_row(edge_um) as f64;
        if let Some(mut t) = self.tilt {
            t.since_release_ms += 1;
            if t.since_release_ms >= loco.row_release_ms {
                t.since_release_ms = 0;
                self.release_row(tick, t.face, ctx);
            }
            let left = self.bubbles.faces[t.face].count as f64;
            if left <= loco.reseal_rows * bpr {
                let step_mm = 2.0 * self.bubbles.faces[t.face].mean_radius_um / 1000.0;
                let direction = self.face_angle_deg(t.face) + 180.0;
                self.drive.kick(step_mm, direction, loco.tau_v_s);
                self.tilt = None;
                self.bubble_event(ev, tick, t.face, "reseal");
            } else {
                self.tilt = Some(t);
            }
        } else {
            for face in 0..FACE_COUNT {
                let fb = self.bubbles.faces[face];
                if fb.count == 0 || fb.fill_fraction(edge_um) < loco.lift_density * PACKING_LIMIT {
                    continue;
                }
                let d = tilt_decision(
                    fb.pressure_mbar(params.tension),
                    2.0 * fb.mean_radius_um,
                    &self.body,
                    &ctx.physics.fluid,
                    loco.contact_fraction,
                );
                if d.lift {
                    self.tilt = Some(Tilt { face, angle_deg: d.tilt_angle_deg, since_release_ms: 0 });
                    self.bubble_event(ev, tick, face, "lift");
                    self.release_row(tick, face, ctx);
                    break;
                }
                if self.bubbles.coalesce(face, params) {
                    self.bubble_event(ev, tick, face, "coalesce");
                }
            }
        }
        while self.released.front().is_some_and(|r| r.0 <= tick) {
            self.released.pop_front();
        }
    }

    fn release_row(&mut self, tick: u64, face: usize, ctx: &TickContext) {
        let params = &ctx.physics.bubble;
        let before = self.bubbles.faces[face].count;
        self.bubbles.release(face, true, params);
        let gone = before - self.bubbles.faces[face].count;
        if gone > 0 {
            let expiry = tick + (params.linger_s * 1000.0).round() as u64;
            self.released.push_back((expiry, gone));
        }
    }

    fn bubble_event(&self, ev: &mut Vec<EventRecord>, tick: u64, face: usize, what: &str) {
        let f = &self.bubbles.faces[face];
        let p = Payload::new()
            .text("event", what)
            .int("face", face as i64)
            .int("count", f.count as i64)
            .num("radius_um", f.mean_radius_um);
        self.event(ev, tick, EventKind::Bubble, p);
    }

    fn move_body(&mut self, ctx: &TickContext) {
        let loco = &ctx.physics.locomotion;
        self.proposed = self.drive.advance(DT_S, loco.tau_v_s);
        if self.docked {
            self.rotation = None;
        }
        if let Some(r) = &mut self.rotation {
            self.heading_deg = normalize_deg(self.heading_deg + r.advance(DT_S));
            if r.is_spent() {
                self.rotation = None;
            }
        }
    }

    pub fn tilt_deg(&self) -> f64 {
        self.tilt.map_or(0.0, |t| t.angle_deg)
    }

    pub fn is_finite(&self) -> bool {
        [self.x_mm, self.y_mm, self.heading_deg, self.pd.value, self.drive.velocity_mm_s[0], self.drive.velocity_mm_s[1]]
            .iter()
            .chain(self.bubbles.faces.iter().map(|f| &f.mean_radius_um))
            .all(|v| v.is_finite())
    }
}

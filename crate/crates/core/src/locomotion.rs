//! Quasi-static mechanics of one cube: gravity/buoyancy bookkeeping for the
//! interior fill states, the tilt criterion, ratchet translation, rotation
//! kicks on actuator-face switches and viscous relaxation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bubble_dynamics::FACE_COUNT;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteriorFill {
    WaterFilledHalfSubmerged,
    #[default]
    FilledToWaterline,
    GasFilledHalfSubmerged,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallModel {
    /// Massless walls of zero thickness.
    IdealThinWall,
    /// Finite walls and the weighed dry mass.
    #[default]
    MeasuredWalls,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FillScenario {
    pub interior: InteriorFill,
    pub walls: WallModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmartletBody {
    pub edge_mm: f64,
    pub wall_um: f64,
    pub dry_weight_un: f64,
    pub fill: FillScenario,
}

impl Default for SmartletBody {
    fn default() -> Self {
        SmartletBody { edge_mm: 1.0, wall_um: 40.0, dry_weight_un: 3.9, fill: FillScenario::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluidEnv {
    /// kg/m^3
    pub rho_w: f64,
    /// m/s^2
    pub g: f64,
    /// mPa s
    pub eta_mpa_s: f64,
    pub film_depth_um: f64,
}

impl Default for FluidEnv {
    fn default() -> Self {
        FluidEnv { rho_w: 1000.0, g: 9.8, eta_mpa_s: 1.0, film_depth_um: 500.0 }
    }
}

impl FluidEnv {
    /// Weight of `volume_mm3` of water in uN.
    fn water_weight_un(&self, volume_mm3: f64) -> f64 {
        self.rho_w * volume_mm3 * 1e-9 * self.g * 1e6
    }
}

/// Net downward load on the glass in uN (negative: net buoyant).
pub fn net_gravity(body: &SmartletBody, fluid: &FluidEnv) -> f64 {
    let e = body.edge_mm;
    let depth = (fluid.film_depth_um / 1000.0).min(e);
    let submerged = e * e * depth;
    match body.fill.walls {
        WallModel::IdealThinWall => match body.fill.interior {
            InteriorFill::WaterFilledHalfSubmerged => fluid.water_weight_un(e * e * e - submerged),
            InteriorFill::FilledToWaterline => 0.0,
            InteriorFill::GasFilledHalfSubmerged => -fluid.water_weight_un(submerged),
        },
        WallModel::MeasuredWalls => {
            let w = body.wall_um / 1000.0;
            // Four side walls and a top; the bottom face is open.
            let inner_area = (e - 2.0 * w).powi(2);
            let interior = inner_area * (e - w);
            let interior_below = inner_area * depth;
            let wall_buoyancy = fluid.water_weight_un(submerged - interior_below);
            match body.fill.interior {
                InteriorFill::WaterFilledHalfSubmerged => {
                    body.dry_weight_un - wall_buoyancy + fluid.water_weight_un(interior - interior_below)
                }
                InteriorFill::FilledToWaterline => body.dry_weight_un - wall_buoyancy,
                InteriorFill::GasFilledHalfSubmerged => body.dry_weight_un - fluid.water_weight_un(submerged),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltDecision {
    pub lift: bool,
    pub tilt_angle_deg: f64,
    /// Pressure force on the wetted strip, uN.
    pub pressure_force_un: f64,
}

/// Pressure force of a bubble row over the strip it wets, against half the
/// net load (the cube pivots about its far edge).
pub fn tilt_decision(
    face_pressure_mbar: f64,
    bubble_diameter_um: f64,
    body: &SmartletBody,
    fluid: &FluidEnv,
    contact_fraction: f64,
) -> TiltDecision {
    let strip_m2 = bubble_diameter_um * 1e-6 * body.edge_mm * 1e-3;
    let pressure_force_un = face_pressure_mbar.max(0.0) * 100.0 * strip_m2 * 1e6 * contact_fraction;
    let half_load = 0.5 * net_gravity(body, fluid).max(0.0);
    let lift = face_pressure_mbar > 0.0 && pressure_force_un > half_load;
    let tilt_angle_deg = if lift {
        (bubble_diameter_um / (body.edge_mm * 1000.0)).clamp(0.0, 1.0).asin().to_degrees()
    } else {
        0.0
    };
    TiltDecision { lift, tilt_angle_deg, pressure_force_un }
}

/// Mean ratchet speed `dx * f`, mm/s.
pub fn ratchet_velocity(step_mm: f64, cycle_hz: f64) -> f64 {
    step_mm.max(0.0) * cycle_hz.max(0.0)
}

/// Stokes drag `6 pi eta R v` in nN.
pub fn stokes_drag(v_mm_s: f64, radius_mm: f64, eta_mpa_s: f64) -> f64 {
    6.0 * PI * (eta_mpa_s * 1e-3) * (radius_mm * 1e-3) * (v_mm_s * 1e-3) * 1e9
}

pub fn reynolds(v_mm_s: f64, length_mm: f64, fluid: &FluidEnv) -> f64 {
    fluid.rho_w * (v_mm_s * 1e-3) * (length_mm * 1e-3) / (fluid.eta_mpa_s * 1e-3)
}

/// Bare Stokes velocity decay time of a water sphere, with an optional
/// added-mass coefficient.
pub fn sphere_decay_time_s(diameter_mm: f64, added_mass: f64, fluid: &FluidEnv) -> f64 {
    let r = diameter_mm * 0.5e-3;
    let mass = fluid.rho_w * 4.0 / 3.0 * PI * r.powi(3) * (1.0 + added_mass);
    mass / (6.0 * PI * fluid.eta_mpa_s * 1e-3 * r)
}

/// First-order relaxation toward `v_target` over `dt_s`.
pub fn translational_relaxation(v_current: f64, v_target: f64, dt_s: f64, tau_s: f64) -> f64 {
    v_target + (v_current - v_target) * (-dt_s / tau_s).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocomotionParams {
    /// Translational velocity decay time.
    pub tau_v_s: f64,
    /// Rotational velocity decay time.
    pub tau_rot_s: f64,
    /// Net heading change of a face-switch kick; negative is clockwise.
    pub switch_rotation_deg: f64,
    /// Fraction of `P * A` transmitted to the cube edge.
    pub contact_fraction: f64,
    /// Fill (fraction of the packing limit) at which the bubble stack lifts the cube.
    pub lift_density: f64,
    /// Interval between row releases while the gap is open.
    pub row_release_ms: u32,
    /// The cube resettles when fewer than this many rows remain.
    pub reseal_rows: f64,
}

impl Default for LocomotionParams {
    fn default() -> Self {
        LocomotionParams {
            tau_v_s: 0.1,
            tau_rot_s: 0.005,
            switch_rotation_deg: -5.0,
            contact_fraction: 1.0,
            lift_density: 0.85,
            row_release_ms: 6,
            reseal_rows: 0.5,
        }
    }
}

/// Outward normal direction of vertical face `face` in the robot frame, degrees.
pub fn face_normal_deg(face: usize) -> f64 {
    (face % FACE_COUNT) as f64 * 90.0
}

pub fn faces_adjacent(a: usize, b: usize) -> bool {
    matches!((a + FACE_COUNT - b) % FACE_COUNT, 1 | 3)
}

/// Exponentially decaying angular velocity kick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationImpulse {
    /// Initial angular rate, deg/s.
    pub rate0_deg_s: f64,
    pub tau_s: f64,
    pub elapsed_s: f64,
}

impl RotationImpulse {
    pub fn with_net_rotation(net_deg: f64, tau_s: f64) -> Self {
        RotationImpulse { rate0_deg_s: net_deg / tau_s, tau_s, elapsed_s: 0.0 }
    }

    pub fn rate_at(&self, t_s: f64) -> f64 {
        self.rate0_deg_s * (-t_s / self.tau_s).exp()
    }

    /// Exact heading change over the next `dt_s`.
    pub fn advance(&mut self, dt_s: f64) -> f64 {
        let a = (-self.elapsed_s / self.tau_s).exp();
        self.elapsed_s += dt_s;
        let b = (-self.elapsed_s / self.tau_s).exp();
        self.rate0_deg_s * self.tau_s * (a - b)
    }

    pub fn remaining_deg(&self) -> f64 {
        self.rate0_deg_s * self.tau_s * (-self.elapsed_s / self.tau_s).exp()
    }

    pub fn is_spent(&self) -> bool {
        self.elapsed_s > 10.0 * self.tau_s
    }
}

/// Kick applied when actuation moves to another face. Only switches to an
/// adjacent face with residual anchored bubbles on the old face rotate the cube.
pub fn switch_rotation(
    prev_face: usize,
    new_face: usize,
    residual_anchored: bool,
    params: &LocomotionParams,
) -> Option<RotationImpulse> {
    (prev_face != new_face && faces_adjacent(prev_face, new_face) && residual_anchored)
        .then(|| RotationImpulse::with_net_rotation(params.switch_rotation_deg, params.tau_rot_s))
}

/// Ratchet drive: each completed tilt cycle adds a velocity impulse of
/// `step / tau_v`, which then relaxes, so one cycle moves exactly `step`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatchetDrive {
    pub velocity_mm_s: [f64; 2],
}

impl RatchetDrive {
    pub fn kick(&mut self, step_mm: f64, direction_deg: f64, tau_v_s: f64) {
        let (s, c) = direction_deg.to_radians().sin_cos();
        self.velocity_mm_s[0] += step_mm / tau_v_s * c;
        self.velocity_mm_s[1] += step_mm / tau_v_s * s;
    }

    /// Displacement over `dt_s` while the velocity relaxes toward zero.
    pub fn advance(&mut self, dt_s: f64, tau_v_s: f64) -> [f64; 2] {
        let keep = (-dt_s / tau_v_s).exp();
        let moved = self.velocity_mm_s.map(|v| v * tau_v_s * (1.0 - keep));
        self.velocity_mm_s = self.velocity_mm_s.map(|v| translational_relaxation(v, 0.0, dt_s, tau_v_s));
        moved
    }

    pub fn speed(&self) -> f64 {
        self.velocity_mm_s[0].hypot(self.velocity_mm_s[1])
    }
}

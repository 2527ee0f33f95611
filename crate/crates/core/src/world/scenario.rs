//! Scenario files: TOML, versioned by `scenario_version = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembler::{self, AssembleError};
use crate::bubble_dynamics::{BubbleParams, FACE_COUNT};
use crate::lablet_vm::{LabletProgram, ACTUATOR_COUNT};
use crate::locomotion::{FluidEnv, LocomotionParams, SmartletBody};
use crate::optical_link::Convention;
use crate::photosensor::PhotodiodeModel;

use super::docking::{DockingParams, FaceCoating};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported scenario_version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("robot {robot}: {source}")]
    Program {
        robot: usize,
        #[source]
        source: AssembleError,
    },
    #[error("cannot serialize scenario: {0}")]
    Serialize(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Arena {
    pub width_mm: f64,
    pub height_mm: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Arena { width_mm: 70.0, height_mm: 70.0 }
    }
}

impl Arena {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_mm).contains(&x) && (0.0..=self.height_mm).contains(&y)
    }
}

/// Zone outline; coordinates are the center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZoneShape {
    Disc { x_mm: f64, y_mm: f64, radius_mm: f64 },
    Rect { x_mm: f64, y_mm: f64, width_mm: f64, height_mm: f64 },
}

impl ZoneShape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            ZoneShape::Disc { x_mm, y_mm, radius_mm } => (x - x_mm).hypot(y - y_mm) <= radius_mm,
            ZoneShape::Rect { x_mm, y_mm, width_mm, height_mm } => {
                (x - x_mm).abs() <= 0.5 * width_mm && (y - y_mm).abs() <= 0.5 * height_mm
            }
        }
    }

    pub fn center(&self) -> (f64, f64) {
        match *self {
            ZoneShape::Disc { x_mm, y_mm, .. } | ZoneShape::Rect { x_mm, y_mm, .. } => (x_mm, y_mm),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightZone {
    pub id: u32,
    pub shape: ZoneShape,
    pub intensity_suns: f64,
    #[serde(default)]
    pub enabled_at_ms: u64,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Laser {
    pub x_mm: f64,
    pub y_mm: f64,
    pub radius_mm: f64,
    pub intensity_suns: f64,
    pub wavelength_nm: f64,
    pub on: bool,
}

impl Default for Laser {
    fn default() -> Self {
        Laser { x_mm: 0.0, y_mm: 0.0, radius_mm: 0.75, intensity_suns: 5.0, wavelength_nm: 635.0, on: false }
    }
}

/// Programming LED, a global broadcast source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Led {
    pub half_bit_ms: f64,
    pub intensity_suns: f64,
    /// Edge jitter as a fraction of the half-bit.
    pub jitter: f64,
    pub convention: Convention,
}

impl Default for Led {
    fn default() -> Self {
        Led { half_bit_ms: 10.0, intensity_suns: 5.0, jitter: 0.0, convention: Convention::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSpec {
    pub x_mm: f64,
    pub y_mm: f64,
    pub heading_deg: f64,
    pub body: SmartletBody,
    /// Program in assembler text form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    /// Start in phase 1; defaults to true when a program is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub running: Option<bool>,
    pub coatings: [FaceCoating; FACE_COUNT],
    /// Vertical face driven by each actuator.
    pub actuator_faces: [usize; ACTUATOR_COUNT],
}

impl Default for RobotSpec {
    fn default() -> Self {
        RobotSpec {
            x_mm: 35.0,
            y_mm: 35.0,
            heading_deg: 0.0,
            body: SmartletBody::default(),
            program: None,
            running: None,
            coatings: [FaceCoating::default(); FACE_COUNT],
            actuator_faces: [0, 3, 2],
        }
    }
}

impl RobotSpec {
    pub fn parsed_program(&self) -> Result<Option<LabletProgram>, AssembleError> {
        self.program.as_deref().map(assembler::parse_program).transpose()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub fluid: FluidEnv,
    pub bubble: BubbleParams,
    pub locomotion: LocomotionParams,
    pub docking: DockingParams,
    pub photodiode: PhotodiodeModel,
}

/// External input applied at a tick boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldCommand {
    MoveLaser { x_mm: f64, y_mm: f64, on: bool },
    ToggleZone { id: u32 },
    /// Broadcast a frame (17 hex digits) from the LED.
    EmitFrame { frame: String },
    PlaceRobot { robot: usize, x_mm: f64, y_mm: f64, heading_deg: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedCommand {
    pub tick: u64,
    pub command: WorldCommand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldScenario {
    pub scenario_version: u32,
    pub name: String,
    pub seed: u64,
    /// Run length used when the caller does not give one.
    pub ticks: u64,
    /// Interval between pose records.
    pub pose_every: u64,
    pub ambient_suns: f64,
    pub power_threshold_suns: f64,
    pub film_depth_um: f64,
    pub arena: Arena,
    pub laser: Laser,
    pub led: Led,
    pub physics: Physics,
    pub zones: Vec<LightZone>,
    pub robots: Vec<RobotSpec>,
    pub commands: Vec<TimedCommand>,
}

impl Default for WorldScenario {
    fn default() -> Self {
        WorldScenario {
            scenario_version: SCENARIO_VERSION,
            name: String::new(),
            seed: 0,
            ticks: 1000,
            pose_every: 50,
            ambient_suns: 1.0,
            power_threshold_suns: 0.5,
            film_depth_um: 500.0,
            arena: Arena::default(),
            laser: Laser::default(),
            led: Led::default(),
            physics: Physics::default(),
            zones: vec![],
            robots: vec![],
            commands: vec![],
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

impl WorldScenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        // A missing version must not silently take the default.
        let raw: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        match raw.get("scenario_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCENARIO_VERSION as i64 => {}
            Some(v) => return Err(ScenarioError::Version(v.max(0) as u32)),
            None => return Err(ScenarioError::Invalid("missing integer `scenario_version`".into())),
        }
        let scenario: WorldScenario = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.scenario_version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.scenario_version));
        }
        if !(self.arena.width_mm > 0.0 && self.arena.height_mm > 0.0) {
            return bad("arena dimensions must be positive".into());
        }
        if !(self.film_depth_um > 0.0) || self.pose_every == 0 {
            return bad("film_depth_um and pose_every must be positive".into());
        }
        let intensities = [self.ambient_suns, self.laser.intensity_suns, self.led.intensity_suns]
            .into_iter()
            .chain(self.zones.iter().map(|z| z.intensity_suns));
        for v in intensities {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("intensity {v} must be finite and >= 0"));
            }
        }
        if !(self.led.half_bit_ms > 0.0) || !(0.0..0.5).contains(&self.led.jitter) {
            return bad("led.half_bit_ms must be positive and led.jitter in [0, 0.5)".into());
        }
        for z in &self.zones {
            let (x, y) = z.shape.center();
            if !self.arena.contains(x, y) {
                return bad(format!("zone {} lies outside the arena", z.id));
            }
        }
        for (i, r) in self.robots.iter().enumerate() {
            if !self.arena.contains(r.x_mm, r.y_mm) || ![r.x_mm, r.y_mm, r.heading_deg].iter().all(|v| v.is_finite()) {
                return bad(format!("robot {i} lies outside the arena"));
            }
            if !(r.body.edge_mm > 0.0) || r.actuator_faces.iter().any(|&f| f >= FACE_COUNT) {
                return bad(format!("robot {i}: edge must be positive and actuator faces < {FACE_COUNT}"));
            }
            r.parsed_program().map_err(|source| ScenarioError::Program { robot: i, source })?;
        }
        Ok(())
    }
}

fn parse_error(text: &str, e: &toml::de::Error) -> ScenarioError {
    let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
    ScenarioError::Parse { line, column, message: e.message().to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario() {
        let s = WorldScenario::from_toml("scenario_version = 1\n").unwrap();
        assert!(s.robots.is_empty());
        assert_eq!(s.arena.width_mm, 70.0);
    }

    #[test]
    fn version_is_required() {
        assert!(matches!(WorldScenario::from_toml("seed = 1\n"), Err(ScenarioError::Invalid(_))));
        assert!(matches!(WorldScenario::from_toml("scenario_version = 2\n"), Err(ScenarioError::Version(2))));
    }

    #[test]
    fn parse_error_has_position() {
        let err = WorldScenario::from_toml("scenario_version = 1\nseed = \"x\"\n").unwrap_err();
        match err {
            ScenarioError::Parse { line, column, .. } => assert_eq!((line, column), (2, 8)),
            other => panic!("{other:?}"),
        }
        let err = WorldScenario::from_toml("scenario_version = 1\n[[robots]]\nx_mm = \n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 3, .. }));
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
scenario_version = 1
name = "t"
seed = 9

[[zones]]
id = 3
shape = { kind = "disc", x_mm = 10.0, y_mm = 10.0, radius_mm = 2.0 }
intensity_suns = 5.0
enabled_at_ms = 100

[[robots]]
x_mm = 5.0
y_mm = 5.0
coatings = ["full_hydrophilic", "full_hydrophobic", { stripes = { left = "hydrophilic", right = "hydrophobic" } }, "full_hydrophilic"]

[[commands]]
tick = 10
command = { kind = "move_laser", x_mm = 1.0, y_mm = 2.0, on = true }
"#;
        let s = WorldScenario::from_toml(text).unwrap();
        assert_eq!(s.zones[0].enabled_at_ms, 100);
        let again = WorldScenario::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_bad_geometry_and_programs() {
        let t = "scenario_version = 1\n[[robots]]\nx_mm = 90.0\n";
        assert!(matches!(WorldScenario::from_toml(t), Err(ScenarioError::Invalid(_))));
        let t = "scenario_version = 1\n[[robots]]\nprogram = \"phase1.act = 0\"\n";
        assert!(matches!(WorldScenario::from_toml(t), Err(ScenarioError::Program { robot: 0, .. })));
        let t = "scenario_version = 1\nambient_suns = -1.0\n";
        assert!(WorldScenario::from_toml(t).is_err());
    }
}

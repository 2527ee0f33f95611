//! Light reaching a robot: isotropic ambient plus directional sources
//! shining straight down (zones, laser, programming LED).

use serde::{Deserialize, Serialize};

use crate::photosensor::{angular_kernel, incidence_angle_deg};

use super::scenario::{Laser, LightZone};

/// Propagation direction of every directional source.
pub const DOWN: [f64; 3] = [0.0, 0.0, -1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightField {
    pub ambient_suns: f64,
    pub zones: Vec<LightZone>,
    pub laser: Laser,
}

impl LightField {
    /// Directional intensity at a point before angular weighting.
    pub fn directional_at(&self, x: f64, y: f64, tick: u64) -> f64 {
        let zones: f64 = self
            .zones
            .iter()
            .filter(|z| z.enabled && tick >= z.enabled_at_ms && z.shape.contains(x, y))
            .map(|z| z.intensity_suns)
            .sum();
        let laser = &self.laser;
        let spot = if laser.on && (x - laser.x_mm).hypot(y - laser.y_mm) <= laser.radius_mm {
            laser.intensity_suns
        } else {
            0.0
        };
        zones + spot
    }

    /// Effective intensity on a face with the given outward normal.
    pub fn intensity_at(&self, x: f64, y: f64, face_normal: [f64; 3], tick: u64) -> f64 {
        let k = angular_kernel(incidence_angle_deg(face_normal, DOWN));
        self.ambient_suns + k * self.directional_at(x, y, tick)
    }

    pub fn zone_mut(&mut self, id: u32) -> Option<&mut LightZone> {
        self.zones.iter_mut().find(|z| z.id == id)
    }
}

/// The cell runs on the steady light at the robot, ambient plus zones and laser.
pub fn power_gate(suns: f64, threshold_suns: f64) -> bool {
    suns >= threshold_suns
}

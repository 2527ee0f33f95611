//! Electrolytic bubble lifecycle on the inner cube faces: nucleation while
//! an electrode is driven, monolayer packing, coalescence past a critical
//! density, Laplace overpressure and release through the bottom gap.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hexagonal packing fraction of equal discs, `pi / (2 sqrt 3)`.
pub const PACKING_LIMIT: f64 = PI / (2.0 * 1.732_050_807_568_877_2);
pub const FACE_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BubbleError {
    #[error("bubble radius must be positive, got {0} um")]
    InvalidRadius(f64),
    #[error("surface tension must be positive, got {0} N/m")]
    InvalidTension(f64),
}

/// Air-water surface tension in N/m.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTension(f64);

impl SurfaceTension {
    pub const WATER: SurfaceTension = SurfaceTension(0.072_75);

    pub fn new(n_per_m: f64) -> Result<Self, BubbleError> {
        if n_per_m > 0.0 {
            Ok(SurfaceTension(n_per_m))
        } else {
            Err(BubbleError::InvalidTension(n_per_m))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for SurfaceTension {
    fn default() -> Self {
        Self::WATER
    }
}

/// Laplace overpressure `2T/r` of a bubble, in mbar.
pub fn laplace_pressure(radius_um: f64, tension: SurfaceTension) -> Result<f64, BubbleError> {
    if radius_um.is_nan() || radius_um <= 0.0 {
        return Err(BubbleError::InvalidRadius(radius_um));
    }
    let pascal = 2.0 * tension.value() / (radius_um * 1e-6);
    Ok(pascal / 100.0)
}

/// Buoyancy of `count` spheres of radius `radius_um`, in uN.
pub fn monolayer_buoyancy(count: u32, radius_um: f64, rho_w: f64, g: f64) -> f64 {
    let r = radius_um * 1e-6;
    count as f64 * rho_w * g * (4.0 / 3.0) * PI * r.powi(3) * 1e6
}

pub fn sphere_volume_um3(radius_um: f64) -> f64 {
    4.0 / 3.0 * PI * radius_um.powi(3)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BubbleParams {
    pub tension: SurfaceTension,
    pub nucleation_radius_um: f64,
    pub mature_radius_um: f64,
    pub max_radius_um: f64,
    /// Time for a fresh bubble to grow to the mature radius.
    pub growth_time_s: f64,
    /// Continuous actuation fills an empty face to the packing limit in this time.
    pub fill_time_s: f64,
    /// Coalescence onset, as a fraction of the packing limit.
    pub critical_density: f64,
    /// Relative amplitude of the per-tick nucleation jitter.
    pub nucleation_jitter: f64,
    /// Released bubbles stay on the gliding surface this long.
    pub linger_s: f64,
    /// Heading change that tears anchored bubbles off their face.
    pub detach_rotation_deg: f64,
}

impl Default for BubbleParams {
    fn default() -> Self {
        BubbleParams {
            tension: SurfaceTension::WATER,
            nucleation_radius_um: 25.0,
            mature_radius_um: 75.0,
            max_radius_um: 150.0,
            growth_time_s: 0.05,
            fill_time_s: 0.2,
            critical_density: 0.85,
            nucleation_jitter: 0.1,
            linger_s: 0.5,
            detach_rotation_deg: 2.0,
        }
    }
}

impl BubbleParams {
    /// Bubbles of mature radius that cover a face at the packing limit.
    pub fn packed_count(&self, edge_um: f64) -> f64 {
        PACKING_LIMIT * edge_um * edge_um / (PI * self.mature_radius_um.powi(2))
    }

    /// Nucleation rate in bubbles per second.
    pub fn nucleation_rate(&self, edge_um: f64) -> f64 {
        self.packed_count(edge_um) / self.fill_time_s
    }

    /// Rows of mature bubbles stacked up one face.
    pub fn rows(&self, edge_um: f64) -> u32 {
        ((edge_um / (2.0 * self.mature_radius_um)).floor() as u32).max(1)
    }

    pub fn bubbles_per_row(&self, edge_um: f64) -> u32 {
        (self.packed_count(edge_um) / self.rows(edge_um) as f64).round().max(1.0) as u32
    }
}

/// Bubble population on one inner face.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceBubbles {
    pub count: u32,
    pub mean_radius_um: f64,
    /// Pinned to the face by local dewetting.
    pub anchored: bool,
    /// Fractional nucleation carried between ticks.
    pub pending: f64,
}

impl FaceBubbles {
    pub fn gas_volume_um3(&self) -> f64 {
        self.count as f64 * sphere_volume_um3(self.mean_radius_um)
    }

    pub fn fill_fraction(&self, edge_um: f64) -> f64 {
        let covered = self.count as f64 * PI * self.mean_radius_um.powi(2) / (edge_um * edge_um);
        covered.clamp(0.0, PACKING_LIMIT)
    }

    pub fn pressure_mbar(&self, tension: SurfaceTension) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            laplace_pressure(self.mean_radius_um, tension).unwrap_or(0.0)
        }
    }

    /// Grow the population for `dt_s` of actuation. `jitter` in `[-1, 1]`
    /// scales the nucleation rate by `1 + params.nucleation_jitter * jitter`.
    pub fn nucleate(&mut self, act_high: bool, dt_s: f64, jitter: f64, edge_um: f64, params: &BubbleParams) {
        if !act_high {
            return;
        }
        if self.count == 0 {
            self.mean_radius_um = params.nucleation_radius_um;
        }
        let cap = params.packed_count(edge_um).ceil() as u32;
        self.pending += params.nucleation_rate(edge_um) * dt_s * (1.0 + params.nucleation_jitter * jitter);
        let born = self.pending.floor().max(0.0);
        self.pending -= born;
        let total = (self.count + born as u32).min(cap.max(self.count));
        let added = total - self.count;
        if added > 0 && self.count > 0 {
            // Newborn bubbles pull the volume-mean radius down.
            let volume = self.count as f64 * self.mean_radius_um.powi(3) + added as f64 * params.nucleation_radius_um.powi(3);
            self.mean_radius_um = (volume / total as f64).cbrt();
        }
        self.count = total;
        if self.count > 0 {
            self.anchored = true;
            if self.mean_radius_um < params.mature_radius_um {
                let rate = (params.mature_radius_um - params.nucleation_radius_um) / params.growth_time_s;
                self.mean_radius_um = (self.mean_radius_um + rate * dt_s).min(params.mature_radius_um);
            }
        }
    }

    /// One round of pairwise merging: `n` bubbles become `ceil(n/2)` with
    /// total gas volume unchanged. No-op when merged bubbles would exceed
    /// the maximum radius.
    pub fn merge_round(&mut self, params: &BubbleParams) -> bool {
        if self.count < 2 {
            return false;
        }
        let merged = self.count.div_ceil(2);
        let radius = self.mean_radius_um * (self.count as f64 / merged as f64).cbrt();
        if radius > params.max_radius_um {
            return false;
        }
        self.count = merged;
        self.mean_radius_um = radius;
        true
    }

    /// Merge once if the face is above the critical density.
    pub fn coalesce(&mut self, edge_um: f64, params: &BubbleParams) -> bool {
        self.fill_fraction(edge_um) > params.critical_density * PACKING_LIMIT && self.merge_round(params)
    }

    /// Release the lowest row through an open gap; returns released gas volume.
    pub fn release(&mut self, gap_open: bool, edge_um: f64, params: &BubbleParams) -> f64 {
        if !gap_open || self.count == 0 {
            return 0.0;
        }
        let n = self.count.min(params.bubbles_per_row(edge_um));
        self.count -= n;
        if self.count == 0 {
            self.anchored = false;
            self.pending = 0.0;
        }
        n as f64 * sphere_volume_um3(self.mean_radius_um)
    }
}

/// Bubble populations of the four vertical faces of one cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleInventory {
    pub faces: [FaceBubbles; FACE_COUNT],
    pub edge_um: f64,
}

impl BubbleInventory {
    pub fn new(edge_um: f64) -> Self {
        BubbleInventory { faces: [FaceBubbles::default(); FACE_COUNT], edge_um }
    }

    pub fn fill_fraction(&self, face: usize) -> f64 {
        self.faces[face].fill_fraction(self.edge_um)
    }

    pub fn total_gas_volume_um3(&self) -> f64 {
        self.faces.iter().map(FaceBubbles::gas_volume_um3).sum()
    }

    pub fn nucleate(&mut self, face: usize, act_high: bool, dt_s: f64, jitter: f64, params: &BubbleParams) {
        let edge = self.edge_um;
        self.faces[face].nucleate(act_high, dt_s, jitter, edge, params);
    }

    pub fn coalesce(&mut self, face: usize, params: &BubbleParams) -> bool {
        let edge = self.edge_um;
        self.faces[face].coalesce(edge, params)
    }

    pub fn release(&mut self, face: usize, gap_open: bool, params: &BubbleParams) -> f64 {
        let edge = self.edge_um;
        self.faces[face].release(gap_open, edge, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const EDGE: f64 = 1000.0;

    #[test]
    fn laplace_values() {
        let t = SurfaceTension::WATER;
        assert_relative_eq!(laplace_pressure(50.0, t).unwrap(), 29.1, max_relative = 0.001);
        assert_relative_eq!(laplace_pressure(100.0, t).unwrap(), 14.55, max_relative = 1e-9);
        assert!((laplace_pressure(100.0, t).unwrap() - 14.4).abs() / 14.4 < 0.02);
        let mut prev = f64::MAX;
        for r in [1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6] {
            let p = laplace_pressure(r, t).unwrap();
            assert!(p < prev);
            prev = p;
        }
        assert!(prev < 2e-3);
        assert!(laplace_pressure(0.0, t).is_err());
        assert!(laplace_pressure(-3.0, t).is_err());
        assert!(SurfaceTension::new(0.0).is_err());
    }

    #[test]
    fn buoyancy_values() {
        assert_eq!(monolayer_buoyancy(0, 75.0, 1000.0, 9.8), 0.0);
        // floor(1000/150)^2 = 36 bubbles of 75 um on a square lattice.
        let f = monolayer_buoyancy(36, 75.0, 1000.0, 9.8);
        assert!((f - 0.623).abs() < 0.001, "{f}");
        assert_relative_eq!(monolayer_buoyancy(72, 75.0, 1000.0, 9.8), 2.0 * f, max_relative = 1e-12);
    }

    #[test]
    fn idle_face_unchanged() {
        let p = BubbleParams::default();
        let mut f = FaceBubbles::default();
        f.nucleate(false, 0.001, 0.0, EDGE, &p);
        assert_eq!(f, FaceBubbles::default());
    }

    #[test]
    fn continuous_actuation_fills_face_in_about_200ms() {
        let p = BubbleParams::default();
        let mut f = FaceBubbles::default();
        let mut t_full = None;
        for tick in 1..=400 {
            f.nucleate(true, 0.001, 0.0, EDGE, &p);
            if t_full.is_none() && f.fill_fraction(EDGE) >= PACKING_LIMIT - 1e-9 {
                t_full = Some(tick);
            }
            assert!(f.mean_radius_um >= 25.0 && f.mean_radius_um <= 150.0);
        }
        let t = t_full.expect("face never filled");
        assert!((190..=215).contains(&t), "filled after {t} ms");
    }

    #[test]
    fn faces_fill_independently() {
        let p = BubbleParams::default();
        let mut inv = BubbleInventory::new(EDGE);
        for _ in 0..100 {
            inv.nucleate(0, true, 0.001, 0.0, &p);
            inv.nucleate(2, true, 0.001, 0.0, &p);
        }
        assert_eq!(inv.faces[0], inv.faces[2]);
        assert_eq!(inv.faces[1], FaceBubbles::default());
    }

    #[test]
    fn eight_bubbles_coalesce_into_one_of_double_radius() {
        let p = BubbleParams::default();
        let mut f = FaceBubbles { count: 8, mean_radius_um: 50.0, anchored: true, pending: 0.0 };
        let v0 = f.gas_volume_um3();
        while f.merge_round(&p) {}
        assert_eq!(f.count, 1);
        assert_relative_eq!(f.mean_radius_um, 100.0, max_relative = 1e-12);
        assert_relative_eq!(f.gas_volume_um3(), v0, max_relative = 1e-12);
    }

    #[test]
    fn coalescence_needs_critical_density_and_lowers_pressure() {
        let p = BubbleParams::default();
        let mut sparse = FaceBubbles { count: 10, mean_radius_um: 75.0, anchored: true, pending: 0.0 };
        assert!(!sparse.coalesce(EDGE, &p));
        let mut dense = FaceBubbles { count: 50, mean_radius_um: 75.0, anchored: true, pending: 0.0 };
        let p0 = dense.pressure_mbar(p.tension);
        assert!(dense.coalesce(EDGE, &p));
        assert_eq!(dense.count, 25);
        assert!(dense.pressure_mbar(p.tension) < p0);
    }

    #[test]
    fn release_drops_one_row() {
        let p = BubbleParams::default();
        assert_eq!(p.rows(EDGE), 6);
        let mut f = FaceBubbles { count: p.packed_count(EDGE).round() as u32, mean_radius_um: 75.0, anchored: true, pending: 0.0 };
        let before = f.fill_fraction(EDGE);
        assert_eq!(f.release(false, EDGE, &p), 0.0);
        let vol = f.release(true, EDGE, &p);
        assert!(vol > 0.0);
        let drop = (before - f.fill_fraction(EDGE)) / before;
        assert!((drop - 1.0 / 6.0).abs() < 0.02, "{drop}");
        let mut prev = f.count;
        while f.count > 0 {
            f.release(true, EDGE, &p);
            assert!(f.count < prev);
            prev = f.count;
        }
        assert!(!f.anchored);
    }
}

//! Short-range face-to-face interaction from wettability patterns.
//!
//! Two facing coats interact through a potential per unit overlap length
//! `U = -(range / 2) k (1 - gap / range)^2`, so the normal force is
//! `k (1 - gap / range)` (positive attracts) and the lateral force follows
//! from how the summed coefficient changes with the lateral offset.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coat {
    Hydrophilic,
    Hydrophobic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceCoating {
    #[default]
    FullHydrophilic,
    FullHydrophobic,
    /// Two vertical halves. `left` covers the half at negative tangent
    /// coordinate, the tangent being the outward normal turned 90 deg
    /// counter-clockwise.
    Stripes { left: Coat, right: Coat },
}

impl FaceCoating {
    /// Coat segments `(from, to, coat)` along the face tangent, centered on the face.
    pub fn segments(&self, edge: f64) -> Vec<(f64, f64, Coat)> {
        let h = 0.5 * edge;
        match *self {
            FaceCoating::FullHydrophilic => vec![(-h, h, Coat::Hydrophilic)],
            FaceCoating::FullHydrophobic => vec![(-h, h, Coat::Hydrophobic)],
            FaceCoating::Stripes { left, right } => vec![(-h, 0.0, left), (0.0, h, right)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DockingParams {
    pub range_mm: f64,
    pub contact_mm: f64,
    /// Contact force per mm of overlap, uN/mm.
    pub philic_philic: f64,
    pub phobic_philic: f64,
    pub phobic_phobic: f64,
    /// Translational friction, uN per mm/s.
    pub friction: f64,
    /// Minimum `-cos` between face normals for two faces to count as facing.
    pub facing_cos: f64,
}

impl Default for DockingParams {
    fn default() -> Self {
        DockingParams {
            range_mm: 0.3,
            contact_mm: 0.01,
            philic_philic: 20.0,
            phobic_philic: -20.0,
            phobic_phobic: 5.0,
            friction: 10.0,
            facing_cos: 0.9,
        }
    }
}

impl DockingParams {
    fn coefficient(&self, a: Coat, b: Coat) -> f64 {
        match (a, b) {
            (Coat::Hydrophilic, Coat::Hydrophilic) => self.philic_philic,
            (Coat::Hydrophobic, Coat::Hydrophobic) => self.phobic_phobic,
            _ => self.phobic_philic,
        }
    }
}

/// Summed contact coefficient (uN) of two facing coats with `b` shifted by
/// `offset` along `a`'s tangent. Facing faces have opposite tangents, so a
/// point `s` on `b` sits at `offset - s` on `a`.
pub fn contact_coefficient(a: &FaceCoating, b: &FaceCoating, offset: f64, edge: f64, params: &DockingParams) -> f64 {
    let mut k = 0.0;
    for (a0, a1, ca) in a.segments(edge) {
        for (b0, b1, cb) in b.segments(edge) {
            let lo = a0.max(offset - b1);
            let hi = a1.min(offset - b0);
            if hi > lo {
                k += params.coefficient(ca, cb) * (hi - lo);
            }
        }
    }
    k
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    /// Normal force, positive attracts.
    pub force_un: f64,
    /// Force on `b` along `a`'s tangent.
    pub lateral_un: f64,
    pub dock: bool,
}

pub fn docking_interaction(
    a: &FaceCoating,
    b: &FaceCoating,
    gap: f64,
    offset: f64,
    edge: f64,
    params: &DockingParams,
) -> Interaction {
    let gap = gap.max(0.0);
    if gap > params.range_mm || offset.abs() >= edge {
        return Interaction { force_un: 0.0, lateral_un: 0.0, dock: false };
    }
    let reach = 1.0 - gap / params.range_mm;
    let k = contact_coefficient(a, b, offset, edge, params);
    let h = 1e-3 * edge;
    let dk = (contact_coefficient(a, b, offset + h, edge, params)
        - contact_coefficient(a, b, offset - h, edge, params))
        / (2.0 * h);
    let force_un = k * reach;
    Interaction {
        force_un,
        lateral_un: 0.5 * params.range_mm * reach * reach * dk,
        dock: gap < params.contact_mm && force_un > 0.0,
    }
}

/// Offset maximizing the contact attraction, searched on a grid of
/// `edge / 100` over `[-edge / 2, edge / 2]`; ties go to the offset nearest `current`.
pub fn equilibrium_offset(a: &FaceCoating, b: &FaceCoating, edge: f64, current: f64, params: &DockingParams) -> f64 {
    let mut best = (f64::MIN, 0.0);
    for i in 0..=100 {
        let d = -0.5 * edge + edge * i as f64 / 100.0;
        let k = contact_coefficient(a, b, d, edge, params);
        let better = k > best.0 + 1e-9 || ((k - best.0).abs() <= 1e-9 && (d - current).abs() < (best.1 - current).abs());
        if better {
            best = (k, d);
        }
    }
    best.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondClass {
    Hydrophilic,
    Hydrophobic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DockLink {
    pub robots: [usize; 2],
    pub faces: [usize; 2],
    pub lateral_offset_mm: f64,
    pub bond_un: f64,
    pub class: BondClass,
}

impl DockLink {
    pub fn new(robots: [usize; 2], faces: [usize; 2], coats: [&FaceCoating; 2], offset: f64, edge: f64, params: &DockingParams) -> Self {
        let bond_un = contact_coefficient(coats[0], coats[1], offset, edge, params);
        let philic_only = DockingParams { phobic_phobic: 0.0, phobic_philic: 0.0, ..*params };
        let from_philic = contact_coefficient(coats[0], coats[1], offset, edge, &philic_only);
        let class = if from_philic >= 0.5 * bond_un { BondClass::Hydrophilic } else { BondClass::Hydrophobic };
        DockLink { robots, faces, lateral_offset_mm: offset, bond_un, class }
    }

    pub fn involves(&self, robot: usize) -> bool {
        self.robots.contains(&robot)
    }
}

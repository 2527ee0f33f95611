//! Separating-axis overlap of oriented squares in the plane.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Square {
    pub center: [f64; 2],
    pub heading_deg: f64,
    pub edge: f64,
}

impl Square {
    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading_deg.to_radians().sin_cos();
        [[c, s], [-s, c]]
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        let [u, v] = self.axes();
        let h = 0.5 * self.edge;
        let mut out = [[0.0; 2]; 4];
        for (i, (a, b)) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)].into_iter().enumerate() {
            out[i] = [
                self.center[0] + h * (a * u[0] + b * v[0]),
                self.center[1] + h * (a * u[1] + b * v[1]),
            ];
        }
        out
    }

    fn project(&self, axis: [f64; 2]) -> (f64, f64) {
        self.corners().iter().fold((f64::MAX, f64::MIN), |(lo, hi), c| {
            let p = c[0] * axis[0] + c[1] * axis[1];
            (lo.min(p), hi.max(p))
        })
    }
}

/// Penetration of two squares: unit normal pointing from `a` toward `b`
/// and depth, or `None` when separated.
pub fn overlap(a: &Square, b: &Square) -> Option<([f64; 2], f64)> {
    let mut best: Option<([f64; 2], f64)> = None;
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (a0, a1) = a.project(axis);
        let (b0, b1) = b.project(axis);
        let depth = a1.min(b1) - a0.max(b0);
        if depth <= 0.0 {
            return None;
        }
        if best.is_none_or(|(_, d)| depth < d) {
            best = Some((axis, depth));
        }
    }
    best.map(|(axis, depth)| {
        let d = [b.center[0] - a.center[0], b.center[1] - a.center[1]];
        if d[0] * axis[0] + d[1] * axis[1] < 0.0 {
            ([-axis[0], -axis[1]], depth)
        } else {
            (axis, depth)
        }
    })
}

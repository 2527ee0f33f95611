//! Face photodetector: steady-state response, asymmetric first-order
//! transients and the hysteretic comparator that produces `Din`.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 10-90 % rise time of a first-order stage is `tau * ln 9`.
pub const LN_9: f64 = 2.197_224_577_336_219_6;
pub const RISE_TIME_US: f64 = 230.0;
pub const FALL_TIME_US: f64 = 1850.0;

const DEFAULT_TABLE: &str = include_str!("../assets/pd_responsivity.csv");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("table needs at least two intensity rows and one bias column")]
    TooSmall,
    #[error("intensities must be strictly increasing and start at 0")]
    Intensities,
}

/// Photocurrent density (mA/cm^2) over intensity (suns) x bias (V).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsivityTable {
    intensities: Vec<f64>,
    biases: Vec<f64>,
    /// `current[i][j]` at `intensities[i]`, `biases[j]`.
    current: Vec<Vec<f64>>,
}

impl ResponsivityTable {
    pub fn parse_csv(text: &str) -> Result<Self, TableError> {
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = rows.next().ok_or(TableError::TooSmall)?;
        let num = |line: usize, s: &str| {
            s.trim().parse::<f64>().map_err(|e| TableError::Parse { line, msg: format!("{s:?}: {e}") })
        };
        let biases = header.split(',').skip(1).map(|s| num(hline, s)).collect::<Result<Vec<_>, _>>()?;
        let mut intensities = vec![];
        let mut current = vec![];
        for (line, row) in rows {
            let cells = row.split(',').map(|s| num(line, s)).collect::<Result<Vec<_>, _>>()?;
            if cells.len() != biases.len() + 1 {
                return Err(TableError::Parse {
                    line,
                    msg: format!("expected {} columns, got {}", biases.len() + 1, cells.len()),
                });
            }
            intensities.push(cells[0]);
            current.push(cells[1..].to_vec());
        }
        if intensities.len() < 2 || biases.is_empty() {
            return Err(TableError::TooSmall);
        }
        if intensities[0] != 0.0 || intensities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TableError::Intensities);
        }
        Ok(ResponsivityTable { intensities, biases, current })
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    /// Linear in log-intensity between tabulated points, linear from the
    /// dark row to the first lit row, log-log extrapolation above the table.
    pub fn current_density(&self, suns: f64, bias: f64) -> f64 {
        let suns = suns.max(0.0);
        let (j0, j1, w) = bracket(&self.biases, bias);
        let col = |i: usize| self.current[i][j0] * (1.0 - w) + self.current[i][j1] * w;
        let n = self.intensities.len();
        if suns <= self.intensities[1] {
            let t = suns / self.intensities[1];
            return col(0) * (1.0 - t) + col(1) * t;
        }
        if suns >= self.intensities[n - 1] {
            let (a, b) = (n - 2, n - 1);
            let slope = (col(b).ln() - col(a).ln()) / (self.intensities[b].ln() - self.intensities[a].ln());
            return col(b) * (suns / self.intensities[b]).powf(slope);
        }
        let i = self.intensities.partition_point(|&x| x <= suns) - 1;
        let (la, lb) = (self.intensities[i].log10(), self.intensities[i + 1].log10());
        let t = (suns.ln() / LN_10 - la) / (lb - la);
        col(i) * (1.0 - t) + col(i + 1) * t
    }
}

impl Default for ResponsivityTable {
    fn default() -> Self {
        Self::parse_csv(DEFAULT_TABLE).expect("bundled responsivity table is valid")
    }
}

/// Bracketing indices and interpolation weight, clamped to the ends.
fn bracket(xs: &[f64], x: f64) -> (usize, usize, f64) {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    if xs.len() == 1 || x <= xs[idx[0]] {
        return (idx[0], idx[0], 0.0);
    }
    let last = idx[idx.len() - 1];
    if x >= xs[last] {
        return (last, last, 0.0);
    }
    let k = idx.iter().position(|&i| xs[i] > x).unwrap();
    let (a, b) = (idx[k - 1], idx[k]);
    (a, b, (x - xs[a]) / (xs[b] - xs[a]))
}

/// Angular weight of a directional source; 90 deg is normal incidence.
pub fn angular_kernel(angle_deg: f64) -> f64 {
    (90.0 - angle_deg).to_radians().cos().max(0.0)
}

/// Elevation of a source seen from a face: 90 deg when the source shines
/// straight onto the face along `-normal`.
pub fn incidence_angle_deg(face_normal: [f64; 3], source_dir: [f64; 3]) -> f64 {
    let dot = -(face_normal[0] * source_dir[0] + face_normal[1] * source_dir[1] + face_normal[2] * source_dir[2]);
    90.0 - dot.clamp(-1.0, 1.0).acos().to_degrees()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotodiodeModel {
    #[serde(skip)]
    pub table: ResponsivityTable,
    pub bias_v: f64,
    /// Transimpedance of the sensor input, V per mA/cm^2.
    pub gain: f64,
    pub tau_rise_us: f64,
    pub tau_fall_us: f64,
    /// Outward normal of the sensing face in the robot frame.
    pub face_normal: [f64; 3],
}

impl Default for PhotodiodeModel {
    fn default() -> Self {
        PhotodiodeModel {
            table: ResponsivityTable::default(),
            bias_v: 0.0,
            gain: 0.05,
            tau_rise_us: RISE_TIME_US / LN_9,
            tau_fall_us: FALL_TIME_US / LN_9,
            face_normal: [0.0, 0.0, 1.0],
        }
    }
}

impl PhotodiodeModel {
    /// Output voltage for an effective (already angle-weighted) intensity.
    pub fn output_for(&self, effective_suns: f64, bias: f64) -> f64 {
        self.gain * self.table.current_density(effective_suns, bias)
    }

    /// Steady output: directional light weighted by the angular kernel on
    /// top of an isotropic ambient floor.
    pub fn steady_response(&self, directional_suns: f64, angle_deg: f64, ambient_suns: f64, bias: f64) -> f64 {
        let effective = ambient_suns.max(0.0) + directional_suns.max(0.0) * angular_kernel(angle_deg);
        self.output_for(effective, bias)
    }

    pub fn transient(&self, initial_v: f64) -> PdTransient {
        PdTransient { value: initial_v, tau_rise_us: self.tau_rise_us, tau_fall_us: self.tau_fall_us }
    }

    /// Comparator discriminating two operating points.
    pub fn comparator_between(&self, low_suns: f64, high_suns: f64) -> Comparator {
        Comparator::between(self.output_for(low_suns, self.bias_v), self.output_for(high_suns, self.bias_v))
    }
}

/// First-order relaxation toward a target with separate rise/fall constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdTransient {
    pub value: f64,
    pub tau_rise_us: f64,
    pub tau_fall_us: f64,
}

impl PdTransient {
    /// Exact update for a target held constant over `dt_us`.
    pub fn step(&mut self, target: f64, dt_us: f64) -> f64 {
        let tau = if target > self.value { self.tau_rise_us } else { self.tau_fall_us };
        self.value = target + (self.value - target) * (-dt_us / tau).exp();
        self.value
    }

    /// Trace of outputs, one sample per target.
    pub fn run(&mut self, targets: impl IntoIterator<Item = f64>, dt_us: f64) -> Vec<f64> {
        targets.into_iter().map(|t| self.step(t, dt_us)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparator {
    pub threshold: f64,
    pub hysteresis: f64,
}

impl Comparator {
    /// Threshold midway between two levels, hysteresis 10 % of the gap.
    pub fn between(low_v: f64, high_v: f64) -> Self {
        Comparator { threshold: 0.5 * (low_v + high_v), hysteresis: 0.1 * (high_v - low_v).abs() }
    }

    pub fn step(&self, value: f64, prior: bool) -> bool {
        let half = 0.5 * self.hysteresis;
        if value > self.threshold + half {
            true
        } else if value < self.threshold - half {
            false
        } else {
            prior
        }
    }
}

/// Pure form of [`Comparator::step`].
pub fn comparator_step(comparator: &Comparator, value: f64, prior: bool) -> bool {
    comparator.step(value, prior)
}

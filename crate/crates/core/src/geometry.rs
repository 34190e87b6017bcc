//! Circular microphone-array geometry and the spread of source-to-mic distances.
//!
//! For a source at `(L, 0)` and mic `k` at angle `theta + 2 pi (k - 1) / N`
//! on a circle of radius `r`, the per-mic distances are
//! `d_k = r sqrt(1 + (L/r)^2 - 2 (L/r) cos(theta + 2 pi (k - 1) / N))`.
//! Their sample standard deviation `sigma_d` is what the array fingerprint
//! depends on; for four or more mics it is nearly constant in `L` and `theta`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_mics: usize,
    pub radius_m: f64,
    pub rotation_rad: f64,
}

impl ArrayGeometry {
    pub fn new(n_mics: usize, radius_m: f64, rotation_rad: f64) -> Result<Self> {
        let g = Self {
            n_mics,
            radius_m,
            rotation_rad,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.n_mics >= 1, "array needs at least one microphone");
        ensure_arg!(
            self.radius_m > 0.0 && self.radius_m.is_finite(),
            "radius must be positive, got {}",
            self.radius_m
        );
        ensure_arg!(self.rotation_rad.is_finite(), "rotation must be finite");
        Ok(())
    }

    pub fn with_rotation(self, rotation_rad: f64) -> Self {
        Self {
            rotation_rad,
            ..self
        }
    }

    /// Angle of mic `k` (0-based) measured from the x axis.
    pub fn mic_angle(&self, k: usize) -> f64 {
        self.rotation_rad + 2.0 * PI * k as f64 / self.n_mics as f64
    }

    /// Cartesian position of mic `k` (0-based), array centre at the origin.
    pub fn mic_position(&self, k: usize) -> (f64, f64) {
        let a = self.mic_angle(k);
        (self.radius_m * a.cos(), self.radius_m * a.sin())
    }

    /// Rotation that points mic `k` (0-based) straight at a source on the +x axis.
    pub fn rotation_facing(n_mics: usize, k: usize) -> f64 {
        -2.0 * PI * k as f64 / n_mics as f64
    }
}

/// Distances from a source at `(L, 0)` to every mic, in mic order.
pub fn mic_distances(geom: &ArrayGeometry, source_distance_m: f64) -> Result<Vec<f64>> {
    geom.validate()?;
    ensure_arg!(
        source_distance_m > 0.0 && source_distance_m.is_finite(),
        "source distance must be positive, got {source_distance_m}"
    );
    let ratio = source_distance_m / geom.radius_m;
    Ok((0..geom.n_mics)
        .map(|k| geom.radius_m * (1.0 + ratio * ratio - 2.0 * ratio * geom.mic_angle(k).cos()).sqrt())
        .collect())
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_std(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Sample standard deviation of the source-to-mic distances.
pub fn sigma_d(geom: &ArrayGeometry, source_distance_m: f64) -> Result<f64> {
    ensure_arg!(geom.n_mics >= 2, "sigma_d needs at least two microphones");
    Ok(sample_std(&mic_distances(geom, source_distance_m)?))
}

/// Evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| {
                if i == steps - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_mics: Vec<usize>,
    pub radius_m: f64,
    pub distance_range_m: (f64, f64),
    pub theta_range_deg: (f64, f64),
    pub steps: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_mics: vec![2, 4, 6, 8],
            radius_m: 0.05,
            distance_range_m: (1.0, 3.0),
            theta_range_deg: (0.0, 90.0),
            steps: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_mics: usize,
    pub distance_m: f64,
    pub theta_deg: f64,
    pub sigma_d_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub n_mics: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
    pub summaries: Vec<SweepSummary>,
}

/// Evaluates `sigma_d` on a `steps x steps` grid of distance and rotation for each mic count.
pub fn sigma_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    ensure_arg!(!cfg.n_mics.is_empty(), "sweep needs at least one mic count");
    ensure_arg!(cfg.steps >= 1, "sweep needs at least one step");
    let (l_lo, l_hi) = cfg.distance_range_m;
    let (t_lo, t_hi) = cfg.theta_range_deg;
    ensure_arg!(l_lo > 0.0 && l_lo <= l_hi, "invalid distance range {l_lo}..{l_hi}");
    ensure_arg!(t_lo <= t_hi, "invalid theta range {t_lo}..{t_hi}");
    let distances = linspace(l_lo, l_hi, cfg.steps);
    let thetas = linspace(t_lo, t_hi, cfg.steps);

    let mut points = Vec::with_capacity(cfg.n_mics.len() * cfg.steps * cfg.steps);
    let mut summaries = Vec::with_capacity(cfg.n_mics.len());
    for &n in &cfg.n_mics {
        let start = points.len();
        for &l in &distances {
            for &t in &thetas {
                let geom = ArrayGeometry::new(n, cfg.radius_m, t.to_radians())?;
                points.push(SweepPoint {
                    n_mics: n,
                    distance_m: l,
                    theta_deg: t,
                    sigma_d_m: sigma_d(&geom, l)?,
                });
            }
        }
        let values: Vec<f64> = points[start..].iter().map(|p| p.sigma_d_m).collect();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        summaries.push(SweepSummary {
            n_mics: n,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min,
            max,
            range: max - min,
        });
    }
    Ok(SweepTable { points, summaries })
}

impl SweepTable {
    /// `N,L_m,theta_deg,sigma_d_m` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,L_m,theta_deg,sigma_d_m\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{:.17e}", p.n_mics, p.distance_m, p.theta_deg, p.sigma_d_m);
        }
        out
    }

    pub fn summary(&self, n_mics: usize) -> Option<&SweepSummary> {
        self.summaries.iter().find(|s| s.n_mics == n_mics)
    }
}

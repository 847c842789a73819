//! Reconstruction error metrics against analytic ground truth.

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::HeightGrid;
use crate::simulator::{ObjectSurface, SkinField};
use crate::surface::SurfaceModel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid bins: {0}")]
    InvalidBins(String),
    #[error("no samples in the shared footprint")]
    EmptySupport,
    #[error("truth is not a sine surface")]
    NotSine,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can be queried as `z = f(x, y)`.
pub trait HeightField: Sync {
    fn height(&self, x: f64, y: f64) -> f64;
}

impl HeightField for SurfaceModel {
    fn height(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y)
    }
}

impl HeightField for ObjectSurface {
    fn height(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y)
    }
}

impl HeightField for SkinField<'_> {
    fn height(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y)
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync> HeightField for F {
    fn height(&self, x: f64, y: f64) -> f64 {
        self(x, y)
    }
}

/// Grid points at multiples of `spacing` inside the model's footprint.
pub fn footprint_samples(model: &SurfaceModel, spacing: f64) -> Vec<[f64; 2]> {
    let fp = model.footprint();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in fp {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let grid = HeightGrid::aligned(lo, hi, spacing);
    let mut out = Vec::new();
    for j in 0..grid.rows {
        for i in 0..grid.cols {
            let c = grid.center(i, j);
            if model.contains(c[0], c[1]) {
                out.push(c);
            }
        }
    }
    out
}

/// Polar sample set: `n_theta` angles on each of `n_r` radii in `(0, r_max]`,
/// plus the centre.
pub fn polar_samples(center: [f64; 2], r_max: f64, n_r: usize, n_theta: usize) -> Vec<[f64; 2]> {
    let mut out = vec![center];
    for i in 1..=n_r {
        let r = r_max * i as f64 / n_r as f64;
        for k in 0..n_theta {
            let a = TAU * k as f64 / n_theta as f64;
            out.push([center[0] + r * a.cos(), center[1] + r * a.sin()]);
        }
    }
    out
}

/// Root-mean-square height difference over `samples`.
pub fn rms_error(recon: &impl HeightField, truth: &impl HeightField, samples: &[[f64; 2]]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let ss: f64 = samples.par_iter().map(|&[x, y]| (recon.height(x, y) - truth.height(x, y)).powi(2)).sum();
    Some((ss / samples.len() as f64).sqrt())
}

/// RMS over the occupied cells of a grid.
pub fn grid_rms(grid: &HeightGrid, truth: &impl HeightField) -> Option<f64> {
    let n = grid.occupied_count();
    (n > 0).then(|| (grid.occupied().map(|[x, y, z]| (z - truth.height(x, y)).powi(2)).sum::<f64>() / n as f64).sqrt())
}

/// Mean absolute error per radial bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    /// Bin centres (mm), increasing.
    pub bins: Vec<f64>,
    /// Mean `|recon - truth|`; `None` for bins without samples.
    pub error: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Mean curvature of the truth at each bin centre (1/mm).
    pub reference_curvature: Option<Vec<f64>>,
}

impl ErrorProfile {
    pub fn max_error(&self) -> Option<f64> {
        self.error.iter().flatten().copied().reduce(f64::max)
    }

    /// Columns `r,error,count,curvature`; absent values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "error", "count", "curvature"])?;
        for (k, r) in self.bins.iter().enumerate() {
            let e = self.error[k].map(|v| v.to_string()).unwrap_or_default();
            let c = self.reference_curvature.as_ref().map(|c| c[k].to_string()).unwrap_or_default();
            w.write_record([r.to_string(), e, self.counts[k].to_string(), c])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sample(recon: &impl HeightField, samples: &[[f64; 2]]) -> Vec<[f64; 3]> {
    samples.par_iter().map(|&[x, y]| [x, y, recon.height(x, y)]).collect()
}

/// Bins samples by distance from `center` using the increasing bin `edges`
/// (`edges.len() - 1` bins, half-open except the last).
pub fn radial_error(
    recon: &impl HeightField,
    truth: &ObjectSurface,
    center: [f64; 2],
    edges: &[f64],
    samples: &[[f64; 2]],
) -> Result<ErrorProfile, EvalError> {
    radial_error_points(&sample(recon, samples), truth, center, edges)
}

/// [`radial_error`] over reconstructed points `(x, y, z)`.
pub fn radial_error_points(
    points: &[[f64; 3]],
    truth: &ObjectSurface,
    center: [f64; 2],
    edges: &[f64],
) -> Result<ErrorProfile, EvalError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EvalError::InvalidBins(format!("{edges:?}")));
    }
    let nb = edges.len() - 1;
    let (sum, counts) = points
        .par_iter()
        .fold(
            || (vec![0.0; nb], vec![0usize; nb]),
            |(mut s, mut c), &[x, y, z]| {
                let r = (x - center[0]).hypot(y - center[1]);
                let k = edges.partition_point(|&e| e <= r);
                let k = if r == edges[nb] { nb } else { k };
                if (1..=nb).contains(&k) {
                    s[k - 1] += (z - truth.eval(x, y)).abs();
                    c[k - 1] += 1;
                }
                (s, c)
            },
        )
        .reduce(
            || (vec![0.0; nb], vec![0usize; nb]),
            |(mut s, mut c), (s2, c2)| {
                for k in 0..nb {
                    s[k] += s2[k];
                    c[k] += c2[k];
                }
                (s, c)
            },
        );
    let bins: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let curvature = bins.iter().map(|&r| truth.mean_curvature(center[0] + r, center[1])).collect();
    Ok(ErrorProfile {
        error: sum.iter().zip(&counts).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect(),
        bins,
        counts,
        reference_curvature: Some(curvature),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineErrors {
    /// RMS over samples where the truth is above zero (mm).
    pub upper_rms: f64,
    /// Mean over periods of `min(recon) - min(truth)` (mm).
    pub valley_gap: f64,
    /// Periods whose trough was sampled.
    pub periods: usize,
}

/// Upper-surface RMS and valley gap. Only periods whose sampled truth
/// reaches within 1% of the trough count toward the gap.
pub fn sine_errors(
    recon: &impl HeightField,
    truth: &ObjectSurface,
    samples: &[[f64; 2]],
) -> Result<SineErrors, EvalError> {
    sine_errors_points(&sample(recon, samples), truth)
}

/// [`sine_errors`] over reconstructed points `(x, y, z)`.
pub fn sine_errors_points(points: &[[f64; 3]], truth: &ObjectSurface) -> Result<SineErrors, EvalError> {
    let ObjectSurface::Sine { amplitude, omega } = *truth else {
        return Err(EvalError::NotSine);
    };
    let (mut ss, mut n) = (0.0, 0usize);
    let mut periods: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for &[x, y, z] in points {
        let t = truth.eval(x, y);
        if t > 0.0 {
            ss += (z - t).powi(2);
            n += 1;
        }
        let k = (omega * x / TAU).floor() as i64;
        let e = periods.entry(k).or_insert((f64::INFINITY, f64::INFINITY));
        e.0 = e.0.min(z);
        e.1 = e.1.min(t);
    }
    if n == 0 {
        return Err(EvalError::EmptySupport);
    }
    let tol = 0.01 * amplitude.abs();
    let gaps: Vec<f64> = periods.values().filter(|(_, t)| *t <= -amplitude.abs() + tol).map(|(r, t)| r - t).collect();
    let valley_gap = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
    Ok(SineErrors { upper_rms: (ss / n as f64).sqrt(), valley_gap, periods: gaps.len() })
}

/// RMS of `z - truth` over points `(x, y, z)`.
pub fn points_rms(points: &[[f64; 3]], truth: &impl HeightField) -> Option<f64> {
    (!points.is_empty()).then(|| {
        (points.par_iter().map(|&[x, y, z]| (z - truth.height(x, y)).powi(2)).sum::<f64>() / points.len() as f64).sqrt()
    })
}

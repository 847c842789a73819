//! Depth distortion through the transparent gel body.
//!
//! The acrylic plate and gel are treated as one homogeneous body with a single
//! effective index. A marker displacement along the optical axis appears
//! shortened by roughly `n_gel / n_air`; [`correct_depth`] undoes that using a
//! calibrated index.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_AIR: f64 = 1.00027;
pub const DEFAULT_N_GEL: f64 = 1.51;

const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RefractionError {
    #[error("singular ray geometry (denominator {0:e})")]
    SingularGeometry(f64),
    #[error("invalid refraction parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),
    #[error("total internal reflection at {0} rad")]
    TotalInternalReflection(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T, E = RefractionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefractionParams {
    pub n_gel: f64,
    #[serde(default = "default_n_air")]
    pub n_air: f64,
}

fn default_n_air() -> f64 {
    N_AIR
}

impl Default for RefractionParams {
    fn default() -> Self {
        Self { n_gel: DEFAULT_N_GEL, n_air: N_AIR }
    }
}

impl RefractionParams {
    pub fn new(n_gel: f64) -> Result<Self> {
        let p = Self { n_gel, n_air: N_AIR };
        p.validate()?;
        Ok(p)
    }

    /// No refraction at all: both media share the same index.
    pub fn identity() -> Self {
        Self { n_gel: 1.0, n_air: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_gel >= 1.0) || !(self.n_air >= 1.0) || !self.n_gel.is_finite() || !self.n_air.is_finite() {
            return Err(RefractionError::InvalidParams(format!(
                "indices must be finite and >= 1, got n_gel = {}, n_air = {}",
                self.n_gel, self.n_air
            )));
        }
        Ok(())
    }

    pub fn ratio(&self) -> f64 {
        self.n_gel / self.n_air
    }
}

/// Two rays through the interface: incidence angles `theta1`, `theta3` on the
/// air side, refraction angles `theta2`, `theta4` in the gel, and the
/// distances `ac`, `bc` of their crossing points from the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayGeometry {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
    pub ac: f64,
    pub bc: f64,
}

impl RayGeometry {
    /// Completes the geometry from the refraction angles using Snell's law,
    /// with `ac = 1`.
    pub fn from_refraction_angles(
        theta2: f64,
        theta4: f64,
        bc_over_ac: f64,
        params: &RefractionParams,
    ) -> Result<Self> {
        let incidence = |t: f64| {
            let s = params.ratio() * t.sin();
            if s.abs() >= 1.0 {
                Err(RefractionError::TotalInternalReflection(t))
            } else {
                Ok(s.asin())
            }
        };
        Ok(Self { theta1: incidence(theta2)?, theta2, theta3: incidence(theta4)?, theta4, ac: 1.0, bc: bc_over_ac })
    }
}

/// `|P_t1 P_t2| / |P'_t1 P'_t2|` for the given ray pair. The index ratio is
/// recovered from the angles as `sin(theta1) / sin(theta2)`.
pub fn displacement_ratio(g: &RayGeometry) -> Result<f64> {
    let den = g.ac * g.theta4.sin() * g.theta1.cos() - g.bc * g.theta2.sin() * g.theta3.cos();
    if den.abs() < SINGULAR_TOL || g.theta2.sin().abs() < SINGULAR_TOL {
        return Err(RefractionError::SingularGeometry(den));
    }
    let num = g.ac * g.theta4.sin() * g.theta2.cos() - g.bc * g.theta2.sin() * g.theta4.cos();
    Ok(g.theta1.sin() / g.theta2.sin() * num / den)
}

/// Relative deviation `E` of the displacement ratio from the index ratio.
pub fn error_term(g: &RayGeometry) -> Result<f64> {
    let ratio = displacement_ratio(g)?;
    Ok(ratio / (g.theta1.sin() / g.theta2.sin()) - 1.0)
}

/// Depth corrected for refraction: `z' + n_gel * observed_delta`.
pub fn correct_depth(z_prime: f64, observed_delta: f64, params: &RefractionParams) -> f64 {
    z_prime + params.n_gel * observed_delta
}

/// Displacement seen through the gel for a true axial displacement.
pub fn apparent_displacement(true_delta: f64, params: &RefractionParams) -> f64 {
    true_delta / params.n_gel
}

/// Apparent axial displacement for a marker seen along a line of sight
/// `theta_air` off the axis, traced through a flat interface with Snell's law.
/// Reduces to `true_delta * n_air / n_gel` on the axis.
pub fn snell_apparent_displacement(true_delta: f64, theta_air: f64, params: &RefractionParams) -> f64 {
    let t = theta_air.abs();
    if t < 1e-9 {
        return true_delta / params.ratio();
    }
    let theta_gel = (t.sin() / params.ratio()).asin();
    true_delta * theta_gel.tan() / t.tan()
}

/// One calibration sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementPair {
    pub true_disp: f64,
    pub observed_disp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: RefractionParams,
    /// RMS of `true - n_gel * observed` (mm).
    pub residual_rms: f64,
}

/// Fits `true = n_gel * observed` through the origin by least squares.
pub fn calibrate_n_gel(data: &[DisplacementPair]) -> Result<Calibration> {
    if data.len() < 2 {
        return Err(RefractionError::DegenerateCalibration(format!("{} samples, need 2", data.len())));
    }
    if data.iter().any(|p| !p.true_disp.is_finite() || !p.observed_disp.is_finite()) {
        return Err(RefractionError::DegenerateCalibration("non-finite sample".into()));
    }
    let sxx: f64 = data.iter().map(|p| p.observed_disp * p.observed_disp).sum();
    if sxx == 0.0 {
        return Err(RefractionError::DegenerateCalibration("all observed displacements are zero".into()));
    }
    let first = data[0].observed_disp;
    if data.iter().all(|p| p.observed_disp == first) {
        return Err(RefractionError::DegenerateCalibration("observed displacements are all equal".into()));
    }
    let sxy: f64 = data.iter().map(|p| p.observed_disp * p.true_disp).sum();
    let n_gel = sxy / sxx;
    let rss: f64 = data.iter().map(|p| (p.true_disp - n_gel * p.observed_disp).powi(2)).sum();
    let params = RefractionParams { n_gel, n_air: N_AIR };
    params
        .validate()
        .map_err(|_| RefractionError::DegenerateCalibration(format!("fitted index {n_gel} is below 1")))?;
    Ok(Calibration { params, residual_rms: (rss / data.len() as f64).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub step_index: usize,
    pub true_disp_mm: f64,
    pub observed_disp_mm: f64,
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Into::into)).collect()
}

/// Averages repeated trials that share a step index, in step order.
pub fn average_repeats(rows: &[SweepRow]) -> Vec<DisplacementPair> {
    let mut steps: Vec<usize> = rows.iter().map(|r| r.step_index).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|s| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.step_index == s).collect();
            let n = group.len() as f64;
            DisplacementPair {
                true_disp: group.iter().map(|r| r.true_disp_mm).sum::<f64>() / n,
                observed_disp: group.iter().map(|r| r.observed_disp_mm).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Persisted calibration result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub n_gel: f64,
    #[serde(default = "default_n_air")]
    pub n_air: f64,
    pub residual_rms: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl CalibrationRecord {
    pub fn new(cal: &Calibration, timestamp: u64) -> Self {
        Self { n_gel: cal.params.n_gel, n_air: cal.params.n_air, residual_rms: cal.residual_rms, timestamp }
    }

    pub fn params(&self) -> RefractionParams {
        RefractionParams { n_gel: self.n_gel, n_air: self.n_air }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| RefractionError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rec: Self =
            toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| RefractionError::Parse(e.to_string()))?;
        rec.params().validate()?;
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    // Direct transcription of the two-ray geometry: depth below the interface
    // from the crossing distance and the refraction angle, and the apparent
    // depth from the incidence angle.
    fn ratio_oracle(t2: f64, t4: f64, ac: f64, bc: f64, n: f64) -> f64 {
        let t1 = (n * t2.sin()).asin();
        let t3 = (n * t4.sin()).asin();
        (ac / t2.tan() - bc / t4.tan()) / (ac / t1.tan() - bc / t3.tan())
    }

    #[test]
    fn matched_indices_give_unit_ratio() {
        let p = RefractionParams::identity();
        let g = RayGeometry::from_refraction_angles(deg(10.0), deg(8.0), 1.1, &p).unwrap();
        assert_eq!(g.theta1, g.theta2);
        assert_eq!(displacement_ratio(&g).unwrap(), 1.0);
        assert_eq!(error_term(&g).unwrap(), 0.0);
    }

    #[test]
    fn ratio_matches_tangent_form() {
        let p = RefractionParams::default();
        for (a, b, r) in [(10.0, 8.0, 1.1), (5.0, 3.0, 1.0), (9.0, 2.0, 1.2), (3.0, 7.0, 1.1)] {
            let g = RayGeometry::from_refraction_angles(deg(a), deg(b), r, &p).unwrap();
            let want = ratio_oracle(deg(a), deg(b), 1.0, r, p.ratio());
            assert!((displacement_ratio(&g).unwrap() - want).abs() < 1e-9 * want.abs());
        }
    }

    #[test]
    fn small_angles_approach_index_ratio() {
        let p = RefractionParams::default();
        let g = RayGeometry::from_refraction_angles(deg(1.0), deg(1.0), 1.1, &p).unwrap();
        let r = displacement_ratio(&g).unwrap();
        assert!((r / p.ratio() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn error_shrinks_along_ray() {
        let p = RefractionParams::default();
        let mut last = f64::INFINITY;
        for t in [10.0, 8.0, 6.0, 4.0, 2.0, 1.0, 0.5] {
            let g = RayGeometry::from_refraction_angles(deg(t), deg(0.8 * t), 1.1, &p).unwrap();
            let e = error_term(&g).unwrap().abs();
            assert!(e < last);
            last = e;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn singular_geometry_is_reported() {
        let g = RayGeometry { theta1: 0.2, theta2: 0.1, theta3: 0.2, theta4: 0.1, ac: 1.0, bc: 1.0 };
        assert!(matches!(displacement_ratio(&g), Err(RefractionError::SingularGeometry(_))));
    }

    #[test]
    fn steep_rays_totally_reflect() {
        let p = RefractionParams::default();
        assert!(RayGeometry::from_refraction_angles(deg(50.0), deg(8.0), 1.1, &p).is_err());
    }

    #[test]
    fn calibration_on_exact_lines() {
        for n in [1.51, 1.0] {
            let data: Vec<DisplacementPair> = (1..=8)
                .map(|i| DisplacementPair { true_disp: n * i as f64 * 0.7, observed_disp: i as f64 * 0.7 })
                .collect();
            let cal = calibrate_n_gel(&data).unwrap();
            assert!((cal.params.n_gel - n).abs() < 1e-12);
            assert!(cal.residual_rms < 1e-12);
        }
    }

    #[test]
    fn calibration_rejects_degenerate_data() {
        let one = [DisplacementPair { true_disp: 1.0, observed_disp: 1.0 }];
        assert!(calibrate_n_gel(&one).is_err());
        let zeros = [DisplacementPair { true_disp: 1.0, observed_disp: 0.0 }; 3];
        assert!(matches!(calibrate_n_gel(&zeros), Err(RefractionError::DegenerateCalibration(_))));
    }

    #[test]
    fn correct_depth_examples() {
        let p = RefractionParams::new(1.51).unwrap();
        assert!((correct_depth(10.0, 2.0, &p) - 13.02).abs() < 1e-12);
        assert_eq!(correct_depth(10.0, 0.0, &p), 10.0);
        let id = RefractionParams::identity();
        assert_eq!(correct_depth(4.0, 3.0, &id), 7.0);
        assert!((apparent_displacement(1.51, &p) - 1.0).abs() < 1e-15);
        assert_eq!(apparent_displacement(2.5, &id), 2.5);
    }

    #[test]
    fn snell_trace_reduces_on_axis() {
        let p = RefractionParams::default();
        assert!((snell_apparent_displacement(3.0, 0.0, &p) - 3.0 / p.ratio()).abs() < 1e-15);
        let tiny = snell_apparent_displacement(3.0, 1e-6, &p);
        assert!((tiny - 3.0 / p.ratio()).abs() < 1e-9);
        // Off-axis rays see less shrinkage.
        assert!(snell_apparent_displacement(3.0, deg(15.0), &p) < 3.0 / p.ratio());
    }

    #[test]
    fn sweep_csv_and_repeats() {
        let rows: Vec<SweepRow> = (0..2)
            .flat_map(|rep| {
                (1..=3).map(move |s| SweepRow {
                    step_index: s,
                    true_disp_mm: s as f64,
                    observed_disp_mm: s as f64 / 1.5 + if rep == 0 { 0.01 } else { -0.01 },
                })
            })
            .collect();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("step_index,true_disp_mm,observed_disp_mm"));
        let back = read_sweep_csv(&buf[..]).unwrap();
        assert_eq!(back, rows);
        let avg = average_repeats(&back);
        assert_eq!(avg.len(), 3);
        assert!((avg[1].observed_disp - 2.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn record_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.toml");
        let rec = CalibrationRecord { n_gel: 1.5, n_air: N_AIR, residual_rms: 0.01, timestamp: 42 };
        rec.save(&path).unwrap();
        assert_eq!(CalibrationRecord::load(&path).unwrap(), rec);
    }
}

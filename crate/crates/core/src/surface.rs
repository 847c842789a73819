//! Marker surface and skin surface.
//!
//! Markers sit on pins standing perpendicular to the skin, so the skin lies
//! `H + T` below the marker surface along its normal. Both surfaces are
//! thin-plate spline height fields `z = f(x, y)` with `+z` pointing toward the
//! cameras.

use delaunator::Point;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtrc::PatternSpec;
use crate::geometry::WorldPoint;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("surface fit is degenerate: {0}")]
    FitDegenerate(String),
    #[error("invalid skin parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T, E = SurfaceError> = std::result::Result<T, E>;

pub const MIN_FIT_POINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkinParams {
    /// Pin height `H` (mm).
    pub pin_height: f64,
    /// Skin thickness `T` (mm).
    pub skin_thickness: f64,
    pub marker_pitch: f64,
    pub pattern: PatternSpec,
}

impl Default for SkinParams {
    fn default() -> Self {
        Self { pin_height: 1.5, skin_thickness: 0.5, marker_pitch: 2.54, pattern: PatternSpec::hexagon() }
    }
}

impl SkinParams {
    /// Marker-to-skin distance `H + T`.
    pub fn offset(&self) -> f64 {
        self.pin_height + self.skin_thickness
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.pin_height) || !ok(self.skin_thickness) || !(self.marker_pitch > 0.0) {
            return Err(SurfaceError::InvalidParams(format!(
                "H = {}, T = {}, pitch = {}",
                self.pin_height, self.skin_thickness, self.marker_pitch
            )));
        }
        Ok(())
    }
}

/// Point with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedPoint {
    pub position: WorldPoint,
    pub normal: [f64; 3],
    /// Set when the point lies on or outside the fitted footprint, where the
    /// gradient is extrapolated.
    pub boundary: bool,
}

fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// Thin-plate spline height field with exact affine reproduction.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    centers: Vec<[f64; 2]>,
    weights: Vec<f64>,
    affine: [f64; 3],
    origin: [f64; 2],
    scale: f64,
    hull: Vec<[f64; 2]>,
    points: Vec<WorldPoint>,
}

impl SurfaceModel {
    fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin[0]) / self.scale, (y - self.origin[1]) / self.scale)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.normalize(x, y);
        let mut z = self.affine[0] + self.affine[1] * u + self.affine[2] * v;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            z += w * tps_kernel((u - c[0]).powi(2) + (v - c[1]).powi(2));
        }
        z
    }

    /// `(df/dx, df/dy)`.
    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (u, v) = self.normalize(x, y);
        let (mut gu, mut gv) = (self.affine[1], self.affine[2]);
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let (du, dv) = (u - c[0], v - c[1]);
            let r2 = du * du + dv * dv;
            if r2 > 0.0 {
                let k = w * (r2.ln() + 1.0);
                gu += k * du;
                gv += k * dv;
            }
        }
        [gu / self.scale, gv / self.scale]
    }

    /// Unit normal of `f(x, y) - z = 0`, oriented with positive `z`.
    pub fn normal(&self, x: f64, y: f64) -> [f64; 3] {
        let [fx, fy] = self.gradient(x, y);
        let n = Vector3::new(-fx, -fy, 1.0).normalize();
        [n.x, n.y, n.z]
    }

    /// Defining points of the fit.
    pub fn points(&self) -> &[WorldPoint] {
        &self.points
    }

    /// Convex hull of the defining points in `(x, y)`, counter-clockwise.
    pub fn footprint(&self) -> &[[f64; 2]] {
        &self.hull
    }

    /// Signed distance to the footprint boundary, positive inside.
    pub fn footprint_depth(&self, x: f64, y: f64) -> f64 {
        let n = self.hull.len();
        let mut depth = f64::INFINITY;
        for i in 0..n {
            let (a, b) = (self.hull[i], self.hull[(i + 1) % n]);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len = ex.hypot(ey);
            // Left of a counter-clockwise edge is inside.
            let d = (ex * (y - a[1]) - ey * (x - a[0])) / len;
            depth = depth.min(d);
        }
        depth
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.footprint_depth(x, y) >= -1e-9 * self.scale
    }

    /// Largest deviation of the fit from its defining points.
    pub fn max_residual(&self) -> f64 {
        self.points.iter().map(|p| (self.eval(p.x, p.y) - p.z).abs()).fold(0.0, f64::max)
    }
}

fn convex_hull(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let dp: Vec<Point> = pts.iter().map(|p| Point { x: p[0], y: p[1] }).collect();
    let tri = delaunator::triangulate(&dp);
    // delaunator reports the hull clockwise in a y-up frame.
    let mut hull: Vec<[f64; 2]> = tri.hull.iter().map(|&i| pts[i]).collect();
    let area: f64 = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    if area < 0.0 {
        hull.reverse();
    }
    hull
}

/// Fits a thin-plate spline height field through `points`.
pub fn fit_surface(points: &[WorldPoint]) -> Result<SurfaceModel> {
    let n = points.len();
    if n < MIN_FIT_POINTS {
        return Err(SurfaceError::FitDegenerate(format!("{n} points, need {MIN_FIT_POINTS}")));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(SurfaceError::FitDegenerate("non-finite point".into()));
    }
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let scale = points.iter().map(|p| (p.x - mx).hypot(p.y - my)).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(SurfaceError::FitDegenerate("all points share one (x, y)".into()));
    }
    let centers: Vec<[f64; 2]> = points.iter().map(|p| [(p.x - mx) / scale, (p.y - my) / scale]).collect();
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for c in &centers {
        sxx += c[0] * c[0];
        syy += c[1] * c[1];
        sxy += c[0] * c[1];
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-12 * (sxx + syy).powi(2) {
        return Err(SurfaceError::FitDegenerate("points are collinear in (x, y)".into()));
    }

    let m = n + 3;
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        for j in 0..i {
            let r2 = (centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2);
            let k = tps_kernel(r2);
            a[(i, j)] = k;
            a[(j, i)] = k;
        }
        let row = [1.0, centers[i][0], centers[i][1]];
        for (c, v) in row.into_iter().enumerate() {
            a[(i, n + c)] = v;
            a[(n + c, i)] = v;
        }
    }
    let mut rhs = DVector::<f64>::zeros(m);
    for (i, p) in points.iter().enumerate() {
        rhs[i] = p.z;
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| SurfaceError::FitDegenerate("singular system (duplicate points?)".into()))?;

    let model = SurfaceModel {
        hull: convex_hull(&points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>()),
        weights: sol.as_slice()[..n].to_vec(),
        affine: [sol[n], sol[n + 1], sol[n + 2]],
        centers,
        origin: [mx, my],
        scale,
        points: points.to_vec(),
    };
    let zscale = points.iter().map(|p| p.z.abs()).fold(1.0, f64::max);
    if model.max_residual() > 1e-6 * zscale {
        return Err(SurfaceError::FitDegenerate(format!("ill-conditioned fit, residual {:e}", model.max_residual())));
    }
    Ok(model)
}

/// Unit normals of `s` at the `(x, y)` of each point.
pub fn surface_normals(s: &SurfaceModel, at: &[WorldPoint]) -> Vec<OrientedPoint> {
    let tol = 1e-9 * s.scale;
    at.iter()
        .map(|p| OrientedPoint {
            position: *p,
            normal: s.normal(p.x, p.y),
            boundary: s.footprint_depth(p.x, p.y) <= tol,
        })
        .collect()
}

/// Shifts each point by `H + T` against its normal.
pub fn offset_to_skin(pts: &[OrientedPoint], skin: &SkinParams) -> Vec<WorldPoint> {
    let d = skin.offset();
    pts.iter()
        .map(|p| {
            let q = p.position;
            WorldPoint::new(q.x - d * p.normal[0], q.y - d * p.normal[1], q.z - d * p.normal[2])
        })
        .collect()
}

/// Marker points to skin points, with the skin normals as seen by the marker
/// surface.
pub fn skin_points(marker_points: &[WorldPoint], skin: &SkinParams) -> Result<Vec<OrientedPoint>> {
    skin.validate()?;
    let fm = fit_surface(marker_points)?;
    let oriented = surface_normals(&fm, marker_points);
    let shifted = offset_to_skin(&oriented, skin);
    Ok(oriented.iter().zip(shifted).map(|(o, position)| OrientedPoint { position, ..*o }).collect())
}

/// Skin surface `F_s` from triangulated marker positions.
pub fn reconstruct_skin(marker_points: &[WorldPoint], skin: &SkinParams) -> Result<SurfaceModel> {
    let pts: Vec<WorldPoint> = skin_points(marker_points, skin)?.iter().map(|p| p.position).collect();
    fit_surface(&pts)
}

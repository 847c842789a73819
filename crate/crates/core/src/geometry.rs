//! Pinhole stereo camera model.
//!
//! Triangulation follows the rectified parallel-axis model: both virtual
//! cameras share the left camera's focal lengths and principal point, and the
//! right camera centre sits one baseline along `-x` of the left one. Under that
//! convention the disparity `d = u_r - u_l` is positive for points in front of
//! the rig and depth obeys `z = b * fx / d`.
//!
//! Triangulated coordinates are expressed in the left rectified camera frame,
//! so a pixel on the left principal point maps to `x = y = 0`. The baseline
//! midpoint sits at `x = -b / 2` in that frame.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Disparities at or below this magnitude (pixels) are rejected as degenerate.
pub const MIN_DISPARITY_PX: f64 = 0.05;

const UNDISTORT_MAX_ITERS: usize = 50;
const UNDISTORT_TOL_PX: f64 = 1e-10;
const ROTATION_TOL: f64 = 1e-9;
/// Largest deviation from orthonormality accepted (and then repaired) when
/// loading a rounded calibration table.
const ROTATION_REPAIR_TOL: f64 = 5e-3;

static DEFAULT_RIG_TOML: &str = include_str!("../data/rig_default.toml");

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("disparity {0} px is at or below the degenerate threshold")]
    DegenerateDisparity(f64),
    #[error("point at depth {0} mm is not in front of the camera")]
    BehindCamera(f64),
    #[error("undistortion did not converge within {0} iterations (degenerate distortion parameters?)")]
    UndistortionDiverged(usize),
    #[error("invalid camera parameters: {0}")]
    InvalidParameters(String),
    #[error("failed to read rig config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse rig config: {0}")]
    Parse(String),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Image position in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// 3D point in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

/// Intrinsics and Brown-Conrady distortion of a single camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, k1: 0.0, k2: 0.0, p1: 0.0, p2: 0.0 }
    }

    pub fn without_distortion(&self) -> Self {
        Self::pinhole(self.fx, self.fy, self.cx, self.cy)
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0 || self.p1 != 0.0 || self.p2 != 0.0
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.p1, self.p2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidParameters("non-finite intrinsic".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidParameters(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(0.0..width as f64).contains(&self.cx) || !(0.0..height as f64).contains(&self.cy) {
            return Err(GeometryError::InvalidParameters(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, width, height
            )));
        }
        Ok(())
    }

    /// Distortion applied to normalized image coordinates.
    fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (x * radial + dx, y * radial + dy)
    }

    /// Maps an ideal pinhole pixel to the pixel observed through the lens.
    pub fn apply_distortion(&self, p: PixelPoint) -> PixelPoint {
        let x = (p.u - self.cx) / self.fx;
        let y = (p.v - self.cy) / self.fy;
        let (xd, yd) = self.distort_normalized(x, y);
        PixelPoint::new(xd * self.fx + self.cx, yd * self.fy + self.cy)
    }

    /// Inverse of [`apply_distortion`](Self::apply_distortion) by fixed-point
    /// iteration on the forward model.
    pub fn undistort(&self, p: PixelPoint) -> Result<PixelPoint> {
        if !self.has_distortion() {
            return Ok(p);
        }
        let xd = (p.u - self.cx) / self.fx;
        let yd = (p.v - self.cy) / self.fy;
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_MAX_ITERS {
            let r2 = x * x + y * y;
            let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            let nx = (xd - dx) / radial;
            let ny = (yd - dy) / radial;
            if !nx.is_finite() || !ny.is_finite() {
                break;
            }
            let step = ((nx - x) * self.fx).hypot((ny - y) * self.fy);
            x = nx;
            y = ny;
            if step < UNDISTORT_TOL_PX {
                return Ok(PixelPoint::new(x * self.fx + self.cx, y * self.fy + self.cy));
            }
        }
        Err(GeometryError::UndistortionDiverged(UNDISTORT_MAX_ITERS))
    }
}

/// Calibrated stereo pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    /// Right camera orientation relative to the left, row-major.
    pub rotation: [[f64; 3]; 3],
    /// Right camera translation relative to the left (mm).
    pub translation: [f64; 3],
    /// Per-camera image width in pixels.
    pub image_width: u32,
    pub image_height: u32,
}

#[derive(Deserialize)]
struct RigFile {
    #[serde(default = "default_width")]
    image_width: u32,
    #[serde(default = "default_height")]
    image_height: u32,
    left: CameraIntrinsics,
    right: CameraIntrinsics,
    rotation: Vec<f64>,
    translation: [f64; 3],
}

fn default_width() -> u32 {
    640
}

fn default_height() -> u32 {
    480
}

impl Default for CameraRig {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_RIG_TOML).expect("bundled rig config is valid")
    }
}

impl CameraRig {
    /// Builds and validates a rig. A rotation that is orthonormal only to the
    /// precision of a rounded calibration table is projected onto the nearest
    /// rotation first.
    pub fn new(
        left: CameraIntrinsics,
        right: CameraIntrinsics,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        let rotation = nearest_rotation(rotation)?;
        let rig = Self { left, right, rotation, translation, image_width, image_height };
        rig.validate()?;
        Ok(rig)
    }

    /// Ideal rectified rig with no distortion, principal point at the image
    /// centre and a pure `x` baseline.
    pub fn ideal(focal: f64, baseline: f64, width: u32, height: u32) -> Self {
        let cam = CameraIntrinsics::pinhole(focal, focal, width as f64 / 2.0, height as f64 / 2.0);
        Self {
            left: cam,
            right: cam,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [baseline, 0.0, 0.0],
            image_width: width,
            image_height: height,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: RigFile = toml::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
        if file.rotation.len() != 9 {
            return Err(GeometryError::Parse(format!(
                "rotation needs 9 row-major entries, got {}",
                file.rotation.len()
            )));
        }
        let r = &file.rotation;
        let rotation = [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]];
        Self::new(file.left, file.right, rotation, file.translation, file.image_width, file.image_height)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            image_width: u32,
            image_height: u32,
            left: &'a CameraIntrinsics,
            right: &'a CameraIntrinsics,
            rotation: Vec<f64>,
            translation: [f64; 3],
        }
        let out = Out {
            image_width: self.image_width,
            image_height: self.image_height,
            left: &self.left,
            right: &self.right,
            rotation: self.rotation.iter().flatten().copied().collect(),
            translation: self.translation,
        };
        toml::to_string_pretty(&out).expect("rig serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.left.validate(self.image_width, self.image_height)?;
        self.right.validate(self.image_width, self.image_height)?;
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if err > ROTATION_TOL || (r.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidParameters(format!("rotation is not orthonormal (deviation {err:e})")));
        }
        if !(self.baseline() > 0.0) {
            return Err(GeometryError::InvalidParameters("baseline must be positive".into()));
        }
        Ok(())
    }

    /// Distance between the camera centres (mm).
    pub fn baseline(&self) -> f64 {
        let t = self.translation;
        (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt()
    }

    /// Focal length used in the depth law.
    pub fn focal(&self) -> f64 {
        self.left.fx
    }

    pub fn principal_point(&self) -> PixelPoint {
        PixelPoint::new(self.left.cx, self.left.cy)
    }

    /// Copy of this rig with all lens distortion removed.
    pub fn without_distortion(&self) -> Self {
        let mut rig = self.clone();
        rig.left = rig.left.without_distortion();
        rig.right = rig.right.without_distortion();
        rig
    }

    /// Same rig with the baseline scaled by `s`.
    pub fn with_scaled_baseline(&self, s: f64) -> Self {
        let mut rig = self.clone();
        for t in rig.translation.iter_mut() {
            *t *= s;
        }
        rig
    }

    /// `z * d`, constant for a given rig.
    pub fn depth_disparity_product(&self) -> f64 {
        self.baseline() * self.focal()
    }

    /// Depth for a given disparity.
    pub fn depth_from_disparity(&self, d: f64) -> Result<f64> {
        check_disparity(d, self.depth_disparity_product())?;
        Ok(self.depth_disparity_product() / d)
    }

    pub fn disparity_at_depth(&self, z: f64) -> Result<f64> {
        if !(z > 0.0) {
            return Err(GeometryError::BehindCamera(z));
        }
        Ok(self.depth_disparity_product() / z)
    }

    /// `x` coordinate of the baseline midpoint in the left camera frame (mm).
    pub fn midpoint_offset(&self) -> f64 {
        -0.5 * self.baseline()
    }
}

fn check_disparity(d: f64, depth_product: f64) -> Result<()> {
    if !d.is_finite() || d.abs() <= MIN_DISPARITY_PX {
        return Err(GeometryError::DegenerateDisparity(d));
    }
    if d < 0.0 {
        return Err(GeometryError::BehindCamera(depth_product / d));
    }
    Ok(())
}

fn nearest_rotation(r: [[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let m = Matrix3::from_fn(|i, j| r[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidParameters("non-finite rotation".into()));
    }
    let dev = (m * m.transpose() - Matrix3::identity()).abs().max();
    if dev <= ROTATION_TOL && (m.determinant() - 1.0).abs() <= ROTATION_TOL {
        return Ok(r);
    }
    if dev > ROTATION_REPAIR_TOL {
        return Err(GeometryError::InvalidParameters(format!("rotation deviates from orthonormal by {dev:e}")));
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut q = u * vt;
    if q.determinant() < 0.0 {
        return Err(GeometryError::InvalidParameters("rotation has a reflection".into()));
    }
    // One Newton polish step keeps the result orthonormal to machine precision.
    q = 0.5 * (q + q.transpose().try_inverse().expect("rotation invertible"));
    Ok([[q[(0, 0)], q[(0, 1)], q[(0, 2)]], [q[(1, 0)], q[(1, 1)], q[(1, 2)]], [q[(2, 0)], q[(2, 1)], q[(2, 2)]]])
}

/// Undistorts a pixel observed through `cam`.
pub fn undistort(p: PixelPoint, cam: &CameraIntrinsics) -> Result<PixelPoint> {
    cam.undistort(p)
}

/// Recovers the 3D point (left camera frame, mm) from an undistorted pixel pair.
pub fn triangulate(pl: PixelPoint, pr: PixelPoint, rig: &CameraRig) -> Result<WorldPoint> {
    let d = pr.u - pl.u;
    check_disparity(d, rig.depth_disparity_product())?;
    let b = rig.baseline();
    let z = b * rig.left.fx / d;
    let x = b * (pl.u - rig.left.cx) / d;
    // fy enters only through the vertical back-projection.
    let y = b * (pl.v - rig.left.cy) * (rig.left.fx / rig.left.fy) / d;
    Ok(WorldPoint::new(x, y, z))
}

/// Projects a left-camera-frame point into both rectified views, optionally
/// through each camera's lens distortion.
pub fn project(p: WorldPoint, rig: &CameraRig, distort: bool) -> Result<(PixelPoint, PixelPoint)> {
    if !(p.z > 0.0) || !p.is_finite() {
        return Err(GeometryError::BehindCamera(p.z));
    }
    let cam = &rig.left;
    let b = rig.baseline();
    let v = cam.fy * p.y / p.z + cam.cy;
    let left = PixelPoint::new(cam.fx * p.x / p.z + cam.cx, v);
    let right = PixelPoint::new(cam.fx * (p.x + b) / p.z + cam.cx, v);
    if distort {
        Ok((rig.left.apply_distortion(left), rig.right.apply_distortion(right)))
    } else {
        Ok((left, right))
    }
}

/// Undistorts a raw pixel pair and triangulates it.
pub fn triangulate_raw(pl: PixelPoint, pr: PixelPoint, rig: &CameraRig) -> Result<WorldPoint> {
    let pl = rig.left.undistort(pl)?;
    let pr = rig.right.undistort(pr)?;
    triangulate(pl, pr, rig)
}

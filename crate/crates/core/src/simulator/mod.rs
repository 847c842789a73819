//! Forward model of the sensor.
//!
//! Frames: objects, skin and markers live in a global frame with `z` up. The
//! sensor looks down; its left camera frame maps to the global frame through
//! [`sensor_pose`], which places the pattern centre (at `x = -b/2` in the left
//! camera frame, under the baseline midpoint) above the press centre.
//!
//! The contact model is idealized: the skin takes the upper envelope of the
//! object and the pressed rest plane, pins stay perpendicular to the skin, and
//! the gel shortens axial marker displacements by the refractive index.

mod lattice;
mod object;
mod render;
mod scene;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraRig, GeometryError, PixelPoint, WorldPoint};
use crate::refraction::{apparent_displacement, snell_apparent_displacement, RefractionParams};
use crate::stitching::Pose;
use crate::surface::SkinParams;

pub use self::lattice::{lattice_sites, pattern_inradius, pattern_radius};
pub use self::object::{Heightmap, HeightmapMeta, ObjectSurface};
pub use self::render::{render_stereo, render_view, RenderParams, MARKER_DIAMETER};
pub use self::scene::{
    preset, ObjectSpec, PreparedScene, PressSimulation, ScanConfig, Scene, SkinConfig, SweepConfig, PRESET_NAMES,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o: {0}")]
    Io(String),
}

/// Lateral skin drag around the press centre with a Gaussian falloff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shear {
    /// Displacement at the centre (mm).
    pub shift: [f64; 2],
    /// Falloff radius (mm).
    pub radius: f64,
}

impl Shear {
    pub fn displacement(&self, dx: f64, dy: f64) -> [f64; 2] {
        let w = (-(dx * dx + dy * dy) / (2.0 * self.radius * self.radius)).exp();
        [self.shift[0] * w, self.shift[1] * w]
    }
}

/// One vertical press.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressSpec {
    pub center: [f64; 2],
    /// Travel below the approach height (mm).
    pub press_depth: f64,
    /// Height of the undeformed skin's outer surface before pressing (mm).
    pub approach: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shear: Option<Shear>,
}

impl PressSpec {
    pub fn new(center: [f64; 2], press_depth: f64, approach: f64) -> Self {
        Self { center, press_depth, approach, shear: None }
    }

    /// Height of the undeformed skin at full press.
    pub fn plane_height(&self) -> f64 {
        self.approach - self.press_depth
    }
}

/// Deformed skin outer surface.
#[derive(Debug, Clone)]
pub struct SkinField<'a> {
    object: &'a ObjectSurface,
    center: [f64; 2],
    plane: f64,
    /// Rim overestimate `bias * (r / radius)^2`.
    periphery_bias: f64,
    radius: f64,
}

impl<'a> SkinField<'a> {
    pub fn with_periphery_bias(mut self, bias: f64) -> Self {
        self.periphery_bias = bias;
        self
    }

    pub fn plane(&self) -> f64 {
        self.plane
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Unbiased skin height: the object where it is pushed in, else the plane.
    pub fn contact_height(&self, x: f64, y: f64) -> f64 {
        self.object.eval(x, y).max(self.plane)
    }

    pub fn in_contact(&self, x: f64, y: f64) -> bool {
        self.object.eval(x, y) >= self.plane
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r2 = (x - self.center[0]).powi(2) + (y - self.center[1]).powi(2);
        self.contact_height(x, y) + self.periphery_bias * r2 / (self.radius * self.radius)
    }

    /// Unit normal with positive `z`, by central differences.
    pub fn normal(&self, x: f64, y: f64) -> [f64; 3] {
        let h = 1e-5;
        let gx = (self.eval(x + h, y) - self.eval(x - h, y)) / (2.0 * h);
        let gy = (self.eval(x, y + h) - self.eval(x, y - h)) / (2.0 * h);
        let n = (1.0 + gx * gx + gy * gy).sqrt();
        [-gx / n, -gy / n, 1.0 / n]
    }
}

/// Skin pressed onto `obj`.
pub fn deform_skin<'a>(obj: &'a ObjectSurface, press: &PressSpec, skin: &SkinParams) -> SkinField<'a> {
    SkinField {
        object: obj,
        center: press.center,
        plane: press.plane_height(),
        periphery_bias: 0.0,
        radius: pattern_inradius(&skin.pattern, skin.marker_pitch),
    }
}

/// Markers on their pins, in lattice order, global frame.
pub fn place_markers(field: &SkinField, skin: &SkinParams, shear: Option<&Shear>) -> Vec<WorldPoint> {
    let d = skin.offset();
    lattice_sites(&skin.pattern, skin.marker_pitch)
        .into_iter()
        .map(|[sx, sy]| {
            let (x, y) = (field.center[0] + sx, field.center[1] + sy);
            let n = field.normal(x, y);
            let [ox, oy] = shear.map_or([0.0, 0.0], |s| s.displacement(sx, sy));
            WorldPoint::new(x + d * n[0] + ox, y + d * n[1] + oy, field.eval(x, y) + d * n[2])
        })
        .collect()
}

/// Undeformed marker positions for the sensor at `press`.
pub fn rest_markers(press: &PressSpec, skin: &SkinParams) -> Vec<WorldPoint> {
    let flat = ObjectSurface::Flat { height: f64::NEG_INFINITY };
    place_markers(&deform_skin(&flat, press, skin), skin, None)
}

/// Left-camera-to-global transform at full press, with undeformed markers at
/// depth `rest_depth`.
pub fn sensor_pose(press: &PressSpec, skin: &SkinParams, rig: &CameraRig, rest_depth: f64) -> Pose {
    let z_cam = press.plane_height() + skin.offset() + rest_depth;
    Pose {
        rotation: [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
        translation: [press.center[0] + 0.5 * rig.baseline(), press.center[1], z_cam],
    }
}

/// How the gel distorts axial displacements in [`observe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefractionModel {
    /// Divide by `n_gel`.
    #[default]
    Scalar,
    /// Flat-interface Snell trace along the line of sight from the baseline
    /// midpoint.
    Snell,
}

/// Marker images in both views, indexed by lattice site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoObservation {
    pub left: Vec<PixelPoint>,
    pub right: Vec<PixelPoint>,
    /// Apparent marker positions (left camera frame) that were projected.
    pub apparent: Vec<WorldPoint>,
}

impl StereoObservation {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// Projects markers seen through the gel. `markers` and `rest` are matched
/// by index and given in the left camera frame.
pub fn observe(
    markers: &[WorldPoint],
    rest: &[WorldPoint],
    rig: &CameraRig,
    refr: &RefractionParams,
    model: RefractionModel,
    distort: bool,
) -> Result<StereoObservation, SimError> {
    if markers.len() != rest.len() {
        return Err(SimError::InvalidScene(format!("{} markers vs {} rest positions", markers.len(), rest.len())));
    }
    let mid = rig.midpoint_offset();
    let mut obs = StereoObservation { left: Vec::new(), right: Vec::new(), apparent: Vec::new() };
    for (m, r) in markers.iter().zip(rest) {
        let dz = m.z - r.z;
        let dz_app = match model {
            RefractionModel::Scalar => apparent_displacement(dz, refr),
            RefractionModel::Snell => {
                let theta = (r.x - mid).hypot(r.y).atan2(r.z);
                snell_apparent_displacement(dz, theta, refr)
            }
        };
        let a = WorldPoint::new(m.x, m.y, r.z + dz_app);
        let (pl, pr) = project(a, rig, distort)?;
        obs.left.push(pl);
        obs.right.push(pr);
        obs.apparent.push(a);
    }
    Ok(obs)
}

/// Axis-aligned scan region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub size: [f64; 2],
}

/// Press centres in serpentine order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub centers: Vec<[f64; 2]>,
    pub step: f64,
}

impl ScanPlan {
    pub fn presses(&self, press_depth: f64, approach: f64) -> Vec<PressSpec> {
        self.centers.iter().map(|&c| PressSpec::new(c, press_depth, approach)).collect()
    }
}

/// Boustrophedon grid over `region`: `ceil(extent / step) + 1` evenly spaced
/// presses per axis, rows along `x` alternating direction.
pub fn plan_zigzag(region: &Region, step: f64) -> Result<ScanPlan, SimError> {
    if !(step > 0.0) || region.size.iter().any(|s| !(*s >= 0.0)) {
        return Err(SimError::InvalidScene(format!("zigzag needs step > 0 and a nonempty region, got {region:?}")));
    }
    let axis = |lo: f64, w: f64| -> Vec<f64> {
        let n = (w / step).ceil() as usize + 1;
        if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo + w * i as f64 / (n - 1) as f64).collect()
        }
    };
    let xs = axis(region.min[0], region.size[0]);
    let ys = axis(region.min[1], region.size[1]);
    let mut centers = Vec::with_capacity(xs.len() * ys.len());
    for (j, &y) in ys.iter().enumerate() {
        let row: Box<dyn Iterator<Item = &f64>> =
            if j % 2 == 0 { Box::new(xs.iter()) } else { Box::new(xs.iter().rev()) };
        centers.extend(row.map(|&x| [x, y]));
    }
    Ok(ScanPlan { centers, step })
}

/// Deterministic per-stream generator derived from the scene seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> CameraRig {
        CameraRig::default().without_distortion()
    }

    #[test]
    fn flat_press_gives_flat_skin() {
        let obj = ObjectSurface::Flat { height: -10.0 };
        let press = PressSpec::new([0.0, 0.0], 5.0, 3.0);
        let f = deform_skin(&obj, &press, &SkinParams::default());
        assert_eq!(f.eval(1.0, 2.0), -2.0);
        assert_eq!(f.normal(1.0, 2.0), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn full_gaussian_press_conforms() {
        let obj = ObjectSurface::gaussian(5.0, 50.0);
        let press = PressSpec::new([0.0, 0.0], 5.0, 5.0);
        let f = deform_skin(&obj, &press, &SkinParams::default());
        for (x, y) in [(0.0, 0.0), (3.0, 4.0), (-10.0, 2.0)] {
            assert_eq!(f.eval(x, y), obj.eval(x, y));
            assert!(f.in_contact(x, y));
        }
    }

    #[test]
    fn sine_skin_is_upper_envelope() {
        let obj = ObjectSurface::sine(2.5, 2.0 * std::f64::consts::PI / 5.0);
        let press = PressSpec::new([0.0, 0.0], 2.0, 2.5);
        let f = deform_skin(&obj, &press, &SkinParams::default());
        for x in [0.0, 1.0, 2.0, 3.0, 4.0] {
            assert_eq!(f.eval(x, 0.0), obj.eval(x, 0.0).max(0.5));
        }
    }

    #[test]
    fn deeper_press_is_lower_or_equal() {
        let obj = ObjectSurface::gaussian(5.0, 10.0);
        let skin = SkinParams::default();
        let a = PressSpec::new([0.0, 0.0], 2.0, 5.0);
        let b = PressSpec::new([0.0, 0.0], 4.0, 5.0);
        let (fa, fb) = (deform_skin(&obj, &a, &skin), deform_skin(&obj, &b, &skin));
        for i in -20..=20 {
            let x = i as f64 * 0.7;
            assert!(fb.eval(x, 0.3 * x) <= fa.eval(x, 0.3 * x));
        }
    }

    #[test]
    fn markers_sit_offset_above_flat_skin() {
        let obj = ObjectSurface::Flat { height: -2.0 };
        let press = PressSpec::new([0.0, 0.0], 3.0, 0.0);
        let skin = SkinParams { pin_height: 1.5, skin_thickness: 0.5, ..SkinParams::default() };
        let m = place_markers(&deform_skin(&obj, &press, &skin), &skin, None);
        assert_eq!(m.len(), 127);
        assert!(m.iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn rest_frame_sits_at_rest_depth_with_constant_disparity() {
        let rig = rig();
        let skin = SkinParams::default();
        let press = PressSpec::new([4.0, -3.0], 2.0, 1.0);
        let pose = sensor_pose(&press, &skin, &rig, 45.0).inverse();
        let rest: Vec<WorldPoint> = rest_markers(&press, &skin).iter().map(|p| pose.apply(p)).collect();
        assert!(rest.iter().all(|p| (p.z - 45.0).abs() < 1e-9));
        let centre = rest.iter().map(|p| p.x).sum::<f64>() / rest.len() as f64;
        assert!((centre - rig.midpoint_offset()).abs() < 1e-9);
        let obs = observe(&rest, &rest, &rig, &RefractionParams::default(), RefractionModel::Scalar, false).unwrap();
        let d0 = obs.right[0].u - obs.left[0].u;
        for (l, r) in obs.left.iter().zip(&obs.right) {
            assert!((r.u - l.u - d0).abs() < 1e-9);
        }
    }

    #[test]
    fn observed_depth_change_is_shortened() {
        let rig = rig();
        let rest = vec![WorldPoint::new(-6.0, 1.0, 45.0)];
        let moved = vec![WorldPoint::new(-6.0, 1.0, 40.0)];
        let refr = RefractionParams::new(1.51).unwrap();
        let obs = observe(&moved, &rest, &rig, &refr, RefractionModel::Scalar, false).unwrap();
        assert!((obs.apparent[0].z - (45.0 - 5.0 / 1.51)).abs() < 1e-12);
        let plain =
            observe(&moved, &rest, &rig, &RefractionParams::identity(), RefractionModel::Scalar, false).unwrap();
        assert_eq!(plain.left[0], project(moved[0], &rig, false).unwrap().0);
    }

    #[test]
    fn zigzag_counts_and_order() {
        let plan = plan_zigzag(&Region { min: [0.0, 0.0], size: [30.0, 15.0] }, 15.0).unwrap();
        assert_eq!(plan.centers, vec![[0.0, 0.0], [15.0, 0.0], [30.0, 0.0], [30.0, 15.0], [15.0, 15.0], [0.0, 15.0]]);
        let one = plan_zigzag(&Region { min: [2.0, 3.0], size: [0.0, 0.0] }, 15.0).unwrap();
        assert_eq!(one.centers, vec![[2.0, 3.0]]);
        assert!(plan_zigzag(&Region { min: [0.0, 0.0], size: [1.0, 1.0] }, 0.0).is_err());
    }
}

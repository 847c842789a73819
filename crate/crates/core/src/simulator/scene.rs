use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    deform_skin, observe, place_markers, plan_zigzag, render_stereo, rest_markers, sensor_pose, Heightmap,
    ObjectSurface, PressSpec, RefractionModel, Region, RenderParams, Shear, SimError, SkinField, StereoObservation,
};
use crate::detection::GrayImage;
use crate::dtrc::{PatternKind, PatternSpec};
use crate::geometry::{CameraRig, WorldPoint};
use crate::refraction::RefractionParams;
use crate::stitching::Pose;
use crate::surface::SkinParams;

/// Object as written in a scene file. Heightmap paths resolve against the
/// scene file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectSpec {
    Flat {
        #[serde(default)]
        height: f64,
    },
    Gaussian {
        h: f64,
        sigma2: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    Sine {
        amplitude: f64,
        omega: f64,
    },
    Heightmap {
        path: PathBuf,
    },
}

impl ObjectSpec {
    pub fn resolve(&self, base: &Path) -> Result<ObjectSurface, SimError> {
        let obj = match self {
            Self::Flat { height } => ObjectSurface::Flat { height: *height },
            Self::Gaussian { h, sigma2, center } => {
                if !(*sigma2 > 0.0) {
                    return Err(SimError::InvalidScene(format!("sigma2 must be positive, got {sigma2}")));
                }
                ObjectSurface::Gaussian { h: *h, sigma2: *sigma2, center: *center }
            }
            Self::Sine { amplitude, omega } => ObjectSurface::Sine { amplitude: *amplitude, omega: *omega },
            Self::Heightmap { path } => ObjectSurface::Heightmap(Heightmap::load(&base.join(path))?),
        };
        Ok(obj)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkinConfig {
    pub pin_height: f64,
    pub skin_thickness: f64,
    pub marker_pitch: f64,
    pub pattern: PatternKind,
    /// Ring count for circular and hexagon patterns, side length for square.
    pub size: Option<usize>,
}

impl Default for SkinConfig {
    fn default() -> Self {
        let s = SkinParams::default();
        Self {
            pin_height: s.pin_height,
            skin_thickness: s.skin_thickness,
            marker_pitch: s.marker_pitch,
            pattern: PatternKind::Hexagon,
            size: None,
        }
    }
}

impl SkinConfig {
    pub fn params(&self) -> Result<SkinParams, SimError> {
        let pattern = match (self.pattern, self.size) {
            (k, None) => PatternSpec::for_kind(k),
            (PatternKind::Circular, Some(m)) => PatternSpec::circular_layers(m),
            (PatternKind::Hexagon, Some(m)) => PatternSpec::hexagon_layers(m),
            (PatternKind::Square, Some(n)) => PatternSpec::square_side(n),
        };
        pattern.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
        let p = SkinParams {
            pin_height: self.pin_height,
            skin_thickness: self.skin_thickness,
            marker_pitch: self.marker_pitch,
            pattern,
        };
        p.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
        Ok(p)
    }
}

/// Zigzag scan over a rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub min: [f64; 2],
    pub size: [f64; 2],
    pub step: f64,
    pub press_depth: f64,
    pub approach: f64,
}

/// Indentation sweep on a flat object: `steps + 1` depths from zero in
/// increments of `step_mm`, repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub steps: usize,
    pub step_mm: f64,
    pub repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { steps: 8, step_mm: 1.0, repeats: 5 }
    }
}

fn default_rest_depth() -> f64 {
    45.0
}

fn default_true() -> bool {
    true
}

/// Scene description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub name: String,
    pub object: ObjectSpec,
    #[serde(default)]
    pub skin: SkinConfig,
    /// Rig file; the bundled rig when absent.
    #[serde(default)]
    pub rig: Option<PathBuf>,
    #[serde(default)]
    pub refraction: RefractionParams,
    #[serde(default)]
    pub refraction_model: RefractionModel,
    /// Apply lens distortion when projecting.
    #[serde(default)]
    pub distort: bool,
    /// Camera-to-marker depth of the undeformed skin (mm).
    #[serde(default = "default_rest_depth")]
    pub rest_depth: f64,
    #[serde(default)]
    pub render: RenderParams,
    /// Write PNG frames; marker CSVs are always written.
    #[serde(default = "default_true")]
    pub render_images: bool,
    /// Injected rim overestimate of the skin height (mm at the pattern edge).
    #[serde(default)]
    pub periphery_bias: f64,
    #[serde(default)]
    pub presses: Vec<PressSpec>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

pub const PRESET_NAMES: &[&str] = &[
    "gaussian-s50",
    "gaussian-s50-3",
    "gaussian-s10",
    "gaussian-s5",
    "gaussian-s5-3",
    "sine-w1",
    "sine-w2",
    "sine-w3",
    "sine-w4",
    "sine-w5",
    "flat",
    "zigzag",
    "calibration",
    "rapid-jump",
];

impl Scene {
    fn base(name: &str, object: ObjectSpec) -> Self {
        Self {
            name: name.to_string(),
            object,
            skin: SkinConfig::default(),
            rig: None,
            refraction: RefractionParams::default(),
            refraction_model: RefractionModel::Scalar,
            distort: false,
            rest_depth: default_rest_depth(),
            render: RenderParams::default(),
            render_images: true,
            periphery_bias: 0.0,
            presses: Vec::new(),
            scan: None,
            sweep: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::InvalidScene(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scene serializes")
    }

    /// All presses in execution order.
    pub fn press_list(&self) -> Result<Vec<PressSpec>, SimError> {
        let mut out = self.presses.clone();
        if let Some(s) = &self.scan {
            let plan = plan_zigzag(&Region { min: s.min, size: s.size }, s.step)?;
            out.extend(plan.presses(s.press_depth, s.approach));
        }
        if let Some(s) = &self.sweep {
            for _ in 0..s.repeats {
                out.extend((0..=s.steps).map(|k| PressSpec::new([0.0, 0.0], k as f64 * s.step_mm, 0.0)));
            }
        }
        if out.iter().any(|p| !(p.press_depth >= 0.0) || !p.approach.is_finite()) {
            return Err(SimError::InvalidScene("press_depth must be >= 0 and approach finite".into()));
        }
        Ok(out)
    }

    /// Resolves files and parameters; `base` is the scene file's directory.
    pub fn prepare(&self, base: &Path) -> Result<PreparedScene, SimError> {
        let rig = match &self.rig {
            Some(p) => CameraRig::from_file(&base.join(p))?,
            None => CameraRig::default(),
        };
        let rig = if self.distort { rig } else { rig.without_distortion() };
        self.refraction.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
        if !(self.rest_depth > 0.0) {
            return Err(SimError::InvalidScene(format!("rest_depth must be positive, got {}", self.rest_depth)));
        }
        Ok(PreparedScene {
            scene: self.clone(),
            object: self.object.resolve(base)?,
            skin: self.skin.params()?,
            rig,
            presses: self.press_list()?,
        })
    }
}

/// Built-in scenes.
pub fn preset(name: &str) -> Option<Scene> {
    let gaussian = |sigma2: f64| {
        let mut s = Scene::base(name, ObjectSpec::Gaussian { h: 5.0, sigma2, center: [0.0, 0.0] });
        s.presses.push(PressSpec::new([0.0, 0.0], 5.0, 5.0));
        s
    };
    let sine = |omega: f64| {
        let mut s = Scene::base(name, ObjectSpec::Sine { amplitude: 2.5, omega });
        s.presses.push(PressSpec::new([0.0, 0.0], 5.0, 2.5));
        s
    };
    let scene = match name {
        "gaussian-s50" => gaussian(50.0),
        "gaussian-s50-3" => gaussian(50.0 / 3.0),
        "gaussian-s10" => gaussian(10.0),
        "gaussian-s5" => gaussian(5.0),
        "gaussian-s5-3" => gaussian(5.0 / 3.0),
        "sine-w1" => sine(PI / 15.0),
        "sine-w2" => sine(2.0 * PI / 15.0),
        "sine-w3" => sine(PI / 5.0),
        "sine-w4" => sine(4.0 * PI / 15.0),
        "sine-w5" => sine(2.0 * PI / 5.0),
        "flat" => {
            let mut s = Scene::base(name, ObjectSpec::Flat { height: 0.0 });
            s.presses.push(PressSpec::new([0.0, 0.0], 2.0, 0.0));
            s
        }
        "zigzag" => {
            let mut s = Scene::base(name, ObjectSpec::Gaussian { h: 5.0, sigma2: 50.0, center: [0.0, 0.0] });
            s.scan = Some(ScanConfig {
                min: [-15.0, -15.0],
                size: [30.0, 30.0],
                step: 15.0,
                press_depth: 8.0,
                approach: 8.0,
            });
            s.periphery_bias = 0.3;
            s
        }
        "calibration" => {
            let mut s = Scene::base(name, ObjectSpec::Flat { height: 0.0 });
            s.sweep = Some(SweepConfig::default());
            s.render_images = false;
            s
        }
        "rapid-jump" => {
            let mut s = Scene::base(name, ObjectSpec::Gaussian { h: 5.0, sigma2: 50.0, center: [0.0, 0.0] });
            s.presses.push(PressSpec::new([0.0, 0.0], 1.0, 5.0));
            let mut jump = PressSpec::new([0.0, 0.0], 4.0, 5.0);
            jump.shear = Some(Shear { shift: [-2.0, 0.0], radius: 8.0 });
            s.presses.push(jump);
            s
        }
        _ => return None,
    };
    Some(scene)
}

/// Scene with its object, rig and press list resolved.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: Scene,
    pub object: ObjectSurface,
    pub skin: SkinParams,
    pub rig: CameraRig,
    pub presses: Vec<PressSpec>,
}

/// Ground truth and observation of one press.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressSimulation {
    pub index: usize,
    pub press: PressSpec,
    /// Left-camera-to-global transform.
    pub pose: Pose,
    /// Skin surface under each lattice site (global).
    pub skin_truth: Vec<WorldPoint>,
    /// Markers (global), indexed by lattice site.
    pub markers: Vec<WorldPoint>,
    pub observation: StereoObservation,
}

impl PreparedScene {
    pub fn skin_field(&self, press: &PressSpec) -> SkinField<'_> {
        deform_skin(&self.object, press, &self.skin).with_periphery_bias(self.scene.periphery_bias)
    }

    pub fn pose(&self, press: &PressSpec) -> Pose {
        sensor_pose(press, &self.skin, &self.rig, self.scene.rest_depth)
    }

    /// Undeformed marker positions in the left camera frame; identical for
    /// every press.
    pub fn rest_camera_markers(&self) -> Vec<WorldPoint> {
        let press = PressSpec::new([0.0, 0.0], 0.0, 0.0);
        let inv = self.pose(&press).inverse();
        rest_markers(&press, &self.skin).iter().map(|p| inv.apply(p)).collect()
    }

    /// Observation of the undeformed skin.
    pub fn rest_observation(&self) -> Result<StereoObservation, SimError> {
        let rest = self.rest_camera_markers();
        observe(&rest, &rest, &self.rig, &self.scene.refraction, self.scene.refraction_model, self.scene.distort)
    }

    pub fn simulate(&self, index: usize) -> Result<PressSimulation, SimError> {
        let press =
            *self.presses.get(index).ok_or_else(|| SimError::InvalidScene(format!("press {index} out of range")))?;
        let field = self.skin_field(&press);
        let pose = self.pose(&press);
        let markers = place_markers(&field, &self.skin, press.shear.as_ref());
        let skin_truth = super::lattice_sites(&self.skin.pattern, self.skin.marker_pitch)
            .into_iter()
            .map(|[sx, sy]| {
                let (x, y) = (press.center[0] + sx, press.center[1] + sy);
                WorldPoint::new(x, y, field.eval(x, y))
            })
            .collect();
        let inv = pose.inverse();
        let cam: Vec<WorldPoint> = markers.iter().map(|p| inv.apply(p)).collect();
        let observation = observe(
            &cam,
            &self.rest_camera_markers(),
            &self.rig,
            &self.scene.refraction,
            self.scene.refraction_model,
            self.scene.distort,
        )?;
        Ok(PressSimulation { index, press, pose, skin_truth, markers, observation })
    }

    /// Rendered stereo frame for `obs`, noise drawn from `seed` on a stream
    /// chosen by `stream`.
    pub fn render(&self, obs: &StereoObservation, seed: u64, stream: u64) -> Result<GrayImage, SimError> {
        render_stereo(obs, &self.rig, &self.scene.render, seed, stream)
    }
}

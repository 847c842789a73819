//! End-to-end orchestration: scene directories on disk, the inverse pipeline
//! per press, calibration, stitching and evaluation reports.
//!
//! A scene directory holds `manifest.json`, `scene.toml`, the rest frame
//! (`rest.png` and/or `rest_markers.csv`), one frame per press
//! (`press_NNN.png` and/or `press_NNN_markers.csv`) and a `truth/`
//! subdirectory with ground truth that only evaluation reads.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{
    detect_markers, read_detections_csv, split_stereo_frame, write_detections_csv, Blob, DetectionError,
    DetectorParams, GrayImage,
};
use crate::dtrc::{code_frame, match_stereo, DisparityFrame, DtrcError};
use crate::evaluation::{points_rms, radial_error_points, sine_errors_points, ErrorProfile, EvalError, SineErrors};
use crate::geometry::{triangulate_raw, CameraRig, GeometryError, PixelPoint, WorldPoint};
use crate::io::{read_ply, write_atomic, write_ply_to, write_points_csv, IoError};
use crate::raster::{GridSidecar, HeightGrid, RasterError};
use crate::refraction::{
    average_repeats, calibrate_n_gel, correct_depth, read_sweep_csv, write_sweep_csv, CalibrationRecord,
    RefractionError, RefractionParams, SweepRow,
};
use crate::simulator::{
    deform_skin, pattern_inradius, ObjectSurface, PreparedScene, PressSpec, RefractionModel, SimError, SkinConfig,
    StereoObservation, MARKER_DIAMETER,
};
use crate::stitching::{naive_union, stitch, ContactPatch, Pose, StitchError, StitchParams};
use crate::surface::{reconstruct_skin, SkinParams, SurfaceError, SurfaceModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Dtrc(#[from] DtrcError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Refraction(#[from] RefractionError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Stitch(#[from] StitchError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Failed(String),
}

impl PipelineError {
    /// Bad input from the user rather than a failure of the data or algorithm.
    pub fn is_usage(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Sim(SimError::InvalidScene(_)))
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io(IoError::File { path: path.display().to_string(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Inverse-pipeline settings. Fields left unset fall back to the scene
/// manifest, then to built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rig: Option<PathBuf>,
    pub skin: Option<SkinConfig>,
    pub refraction: Option<RefractionParams>,
    /// Calibration record; takes precedence over `refraction`.
    pub calibration: Option<PathBuf>,
    pub detector: Option<DetectorParams>,
    pub stitch: StitchParams,
    /// Patch sample spacing (mm); the stitch resolution when unset.
    pub patch_spacing: Option<f64>,
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    /// Loads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.rig, &mut cfg.calibration, &mut cfg.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.rig, &self.calibration].into_iter().flatten() {
            if !p.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        if let Some(r) = &self.refraction {
            r.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if let Some(d) = &self.detector {
            d.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.stitch.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(s) = self.patch_spacing {
            if !(s > 0.0) {
                return Err(PipelineError::Config(format!("patch_spacing must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Files holding one stereo frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFiles {
    pub image: Option<String>,
    pub markers: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressRecord {
    pub index: usize,
    pub press: PressSpec,
    /// Left-camera-to-global transform.
    pub pose: Pose,
    pub frame: FrameFiles,
    pub truth_skin: String,
    pub truth_markers: String,
    pub truth_ids: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub name: String,
    pub seed: u64,
    pub rig: CameraRig,
    pub skin: SkinParams,
    pub refraction: RefractionParams,
    pub refraction_model: RefractionModel,
    pub object: ObjectSurface,
    pub periphery_bias: f64,
    pub rest_depth: f64,
    pub rest: FrameFiles,
    pub presses: Vec<PressRecord>,
}

impl SceneManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join("manifest.json"))
    }

    /// Ground-truth skin of one press.
    pub fn skin_truth<'a>(&'a self, press: &PressSpec) -> crate::simulator::SkinField<'a> {
        deform_skin(&self.object, press, &self.skin).with_periphery_bias(self.periphery_bias)
    }
}

/// Marker pixels as pseudo-detections, in raster order so that file order
/// carries no correspondence.
fn marker_blobs(points: &[PixelPoint], sigmas: &[f64]) -> Vec<Blob> {
    let mut blobs: Vec<Blob> =
        points.iter().zip(sigmas).map(|(&c, &s)| Blob { center: c, scale: s, strength: 1.0 }).collect();
    blobs.sort_by(|a, b| a.center.v.total_cmp(&b.center.v).then(a.center.u.total_cmp(&b.center.u)));
    blobs
}

fn write_frame(
    dir: &Path,
    stem: &str,
    obs: &StereoObservation,
    scene: &PreparedScene,
    seed: u64,
    stream: u64,
) -> Result<FrameFiles> {
    let sigma: Vec<f64> = obs.apparent.iter().map(|a| 0.5 * MARKER_DIAMETER * scene.rig.left.fx / a.z).collect();
    let mut buf = Vec::new();
    write_detections_csv(&mut buf, &[(0, &marker_blobs(&obs.left, &sigma)), (1, &marker_blobs(&obs.right, &sigma))])?;
    let markers = format!("{stem}_markers.csv");
    write_atomic(&dir.join(&markers), &buf)?;
    let image = if scene.scene.render_images {
        let img = scene.render(obs, seed, stream)?;
        let name = format!("{stem}.png");
        let tmp = dir.join(format!("{name}.partial.png"));
        img.save(&tmp)?;
        std::fs::rename(&tmp, dir.join(&name)).map_err(io_err(&dir.join(&name)))?;
        Some(name)
    } else {
        None
    };
    Ok(FrameFiles { image, markers })
}

fn write_truth(dir: &Path, idx: usize, sim: &crate::simulator::PressSimulation) -> Result<(String, String, String)> {
    let truth = dir.join("truth");
    let skin = format!("truth/press_{idx:03}_skin.csv");
    let markers = format!("truth/press_{idx:03}_markers.csv");
    let ids = format!("truth/press_{idx:03}_ids.csv");
    write_points_csv(&dir.join(&skin), &sim.skin_truth)?;
    write_points_csv(&dir.join(&markers), &sim.markers)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["site", "u_l", "v_l", "u_r", "v_r"]).map_err(IoError::from)?;
    for (k, (l, r)) in sim.observation.left.iter().zip(&sim.observation.right).enumerate() {
        w.write_record([k.to_string(), l.u.to_string(), l.v.to_string(), r.u.to_string(), r.v.to_string()])
            .map_err(IoError::from)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Failed(e.to_string()))?;
    write_atomic(&truth.join(format!("press_{idx:03}_ids.csv")), &bytes)?;
    Ok((skin, markers, ids))
}

/// Simulates every press of a scene into `out`. Presses run in parallel on
/// the current rayon pool; outputs depend only on the scene and `seed`.
pub fn simulate_scene(scene: &PreparedScene, seed: u64, out: &Path) -> Result<SceneManifest> {
    std::fs::create_dir_all(out.join("truth")).map_err(io_err(out))?;
    let rest_obs = scene.rest_observation()?;
    let rest = write_frame(out, "rest", &rest_obs, scene, seed, 0)?;
    let presses = (0..scene.presses.len())
        .into_par_iter()
        .map(|i| -> Result<PressRecord> {
            let sim = scene.simulate(i)?;
            let frame = write_frame(out, &format!("press_{i:03}"), &sim.observation, scene, seed, i as u64 + 1)?;
            let (truth_skin, truth_markers, truth_ids) = write_truth(out, i, &sim)?;
            Ok(PressRecord { index: i, press: sim.press, pose: sim.pose, frame, truth_skin, truth_markers, truth_ids })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = SceneManifest {
        name: scene.scene.name.clone(),
        seed,
        rig: scene.rig.clone(),
        skin: scene.skin,
        refraction: scene.scene.refraction,
        refraction_model: scene.scene.refraction_model,
        object: scene.object.clone(),
        periphery_bias: scene.scene.periphery_bias,
        rest_depth: scene.scene.rest_depth,
        rest,
        presses,
    };
    write_atomic(&out.join("scene.toml"), scene.scene.to_toml_string().as_bytes())?;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Marker centres of both views.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoMarkers {
    pub left: Vec<PixelPoint>,
    pub right: Vec<PixelPoint>,
}

/// Detects markers in a side-by-side frame.
pub fn detect_stereo(img: &GrayImage, params: &DetectorParams) -> Result<StereoMarkers> {
    let (l, r) = split_stereo_frame(img)?;
    let (bl, br) = rayon::join(|| detect_markers(&l, params), || detect_markers(&r, params));
    Ok(StereoMarkers {
        left: bl?.into_iter().map(|b| b.center).collect(),
        right: br?.into_iter().map(|b| b.center).collect(),
    })
}

/// Reads a frame, preferring the rendered image when present.
pub fn load_frame(dir: &Path, files: &FrameFiles, params: &DetectorParams) -> Result<StereoMarkers> {
    if let Some(img) = &files.image {
        let path = dir.join(img);
        if path.exists() {
            return detect_stereo(&GrayImage::load(&path)?, params);
        }
    }
    let path = dir.join(&files.markers);
    let frames = read_detections_csv(File::open(&path).map_err(io_err(&path))?)?;
    let get = |id: u32| -> Vec<PixelPoint> {
        frames.iter().find(|(f, _)| *f == id).map(|(_, b)| b.iter().map(|b| b.center).collect()).unwrap_or_default()
    };
    Ok(StereoMarkers { left: get(0), right: get(1) })
}

/// Per-press inverse model with a fixed rest reference.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    pub rig: CameraRig,
    pub skin: SkinParams,
    pub refraction: RefractionParams,
    /// Patch sample spacing (mm).
    pub spacing: f64,
    rest: HashMap<usize, WorldPoint>,
}

/// Result of one press.
#[derive(Debug, Clone)]
pub struct PressReconstruction {
    pub disparity: DisparityFrame,
    /// Refraction-corrected markers in the global frame, by id.
    pub markers: Vec<(usize, WorldPoint)>,
    pub surface: SurfaceModel,
}

impl Reconstructor {
    /// Builds the rest reference from the undeformed frame.
    pub fn new(
        rig: CameraRig,
        skin: SkinParams,
        refraction: RefractionParams,
        spacing: f64,
        rest: &StereoMarkers,
    ) -> Result<Self> {
        let mut r = Self { rig, skin, refraction, spacing, rest: HashMap::new() };
        let frame = r.disparity(rest)?;
        r.rest = r.triangulate(&frame)?.into_iter().collect();
        Ok(r)
    }

    pub fn disparity(&self, m: &StereoMarkers) -> Result<DisparityFrame> {
        let (l, r) =
            rayon::join(|| code_frame(&m.left, &self.skin.pattern), || code_frame(&m.right, &self.skin.pattern));
        Ok(match_stereo(&l?, &r?)?)
    }

    /// Apparent marker positions (left camera frame), by id.
    pub fn triangulate(&self, frame: &DisparityFrame) -> Result<Vec<(usize, WorldPoint)>> {
        frame.entries.iter().map(|e| Ok((e.id, triangulate_raw(e.left, e.right, &self.rig)?))).collect()
    }

    pub fn rest_point(&self, id: usize) -> Option<WorldPoint> {
        self.rest.get(&id).copied()
    }

    /// Undoes the gel's axial shortening against the rest reference.
    pub fn correct(&self, apparent: &[(usize, WorldPoint)]) -> Result<Vec<(usize, WorldPoint)>> {
        apparent
            .iter()
            .map(|&(id, p)| {
                let r = self
                    .rest_point(id)
                    .ok_or_else(|| PipelineError::Failed(format!("marker {id} missing from the rest frame")))?;
                let z = correct_depth(r.z, p.z - r.z, &self.refraction);
                Ok((id, WorldPoint::new(p.x, p.y, z)))
            })
            .collect()
    }

    /// Full inverse model for one press.
    pub fn reconstruct(&self, m: &StereoMarkers, pose: &Pose) -> Result<PressReconstruction> {
        let disparity = self.disparity(m)?;
        let markers: Vec<(usize, WorldPoint)> =
            self.correct(&self.triangulate(&disparity)?)?.into_iter().map(|(id, p)| (id, pose.apply(&p))).collect();
        let pts: Vec<WorldPoint> = markers.iter().map(|m| m.1).collect();
        let surface = reconstruct_skin(&pts, &self.skin)?;
        Ok(PressReconstruction { disparity, markers, surface })
    }

    /// Radius around the press centre that patches cover.
    pub fn patch_radius(&self) -> f64 {
        pattern_inradius(&self.skin.pattern, self.skin.marker_pitch) - 0.5 * self.skin.marker_pitch
    }

    /// Samples the skin on a global grid at `spacing` within the patch radius.
    pub fn patch(&self, surface: &SurfaceModel, center: [f64; 2], contact_id: u32, pose: Pose) -> ContactPatch {
        let r = self.patch_radius();
        let grid = HeightGrid::aligned([center[0] - r, center[1] - r], [center[0] + r, center[1] + r], self.spacing);
        let mut pts = Vec::new();
        for j in 0..grid.rows {
            for i in 0..grid.cols {
                let [x, y] = grid.center(i, j);
                if (x - center[0]).hypot(y - center[1]) <= r && surface.contains(x, y) {
                    pts.push(WorldPoint::new(x, y, surface.eval(x, y)));
                }
            }
        }
        ContactPatch::new(contact_id, pts, pose)
    }
}

/// Sensor centre in the global frame for a press pose.
pub fn press_center(pose: &Pose, rig: &CameraRig) -> [f64; 2] {
    let c = pose.apply(&WorldPoint::new(rig.midpoint_offset(), 0.0, 0.0));
    [c.x, c.y]
}

/// Settings the inverse pipeline uses for a scene.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub rig: CameraRig,
    pub skin: SkinParams,
    pub refraction: RefractionParams,
    pub detector: DetectorParams,
    pub stitch: StitchParams,
    pub spacing: f64,
}

pub fn resolve_config(cfg: &PipelineConfig, manifest: Option<&SceneManifest>) -> Result<ResolvedConfig> {
    cfg.validate()?;
    let rig = match (&cfg.rig, manifest) {
        (Some(p), _) => CameraRig::from_file(p)?,
        (None, Some(m)) => m.rig.clone(),
        (None, None) => CameraRig::default(),
    };
    let skin = match (&cfg.skin, manifest) {
        (Some(s), _) => s.params()?,
        (None, Some(m)) => m.skin,
        (None, None) => SkinParams::default(),
    };
    let refraction = match (&cfg.calibration, &cfg.refraction) {
        (Some(p), _) => CalibrationRecord::load(p)?.params(),
        (None, Some(r)) => *r,
        (None, None) => RefractionParams::default(),
    };
    let depth = manifest.map_or(45.0, |m| m.rest_depth);
    let detector = cfg.detector.unwrap_or_else(|| DetectorParams::for_marker(MARKER_DIAMETER, depth, rig.left.fx));
    Ok(ResolvedConfig {
        rig,
        skin,
        refraction,
        detector,
        stitch: cfg.stitch,
        spacing: cfg.patch_spacing.unwrap_or(cfg.stitch.resolution),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PressOutcome {
    Ok { markers: usize, patch: String, points: usize },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressReport {
    pub index: usize,
    #[serde(flatten)]
    pub outcome: PressOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub scene: String,
    pub n_gel: f64,
    pub presses: Vec<PressReport>,
}

impl ReconstructReport {
    pub fn succeeded(&self) -> usize {
        self.presses.iter().filter(|p| matches!(p.outcome, PressOutcome::Ok { .. })).count()
    }
}

/// Patch file metadata written next to `press_NNN.ply`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub contact_id: u32,
    pub center: [f64; 2],
    pub pose: Pose,
}

/// Runs the inverse pipeline on every press of a scene directory and writes
/// `press_NNN.ply`, `press_NNN.json`, `press_NNN_disparity.csv` and
/// `report.json` into `out`. Failing presses are reported and skipped.
pub fn reconstruct_scene(scene_dir: &Path, cfg: &PipelineConfig, out: &Path) -> Result<ReconstructReport> {
    let manifest = SceneManifest::load(scene_dir)?;
    let rc = resolve_config(cfg, Some(&manifest))?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let rest = load_frame(scene_dir, &manifest.rest, &rc.detector)?;
    let recon = Reconstructor::new(rc.rig.clone(), rc.skin, rc.refraction, rc.spacing, &rest)?;
    let presses = manifest
        .presses
        .par_iter()
        .map(|rec| {
            let outcome = match reconstruct_press(scene_dir, out, rec, &recon, &rc) {
                Ok(o) => o,
                Err(e) => PressOutcome::Skipped { reason: e.to_string() },
            };
            PressReport { index: rec.index, outcome }
        })
        .collect();
    let report = ReconstructReport { scene: manifest.name.clone(), n_gel: rc.refraction.n_gel, presses };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn reconstruct_press(
    scene_dir: &Path,
    out: &Path,
    rec: &PressRecord,
    recon: &Reconstructor,
    rc: &ResolvedConfig,
) -> Result<PressOutcome> {
    let m = load_frame(scene_dir, &rec.frame, &rc.detector)?;
    let r = recon.reconstruct(&m, &rec.pose)?;
    let center = press_center(&rec.pose, &rc.rig);
    let patch = recon.patch(&r.surface, center, rec.index as u32, rec.pose);
    let stem = format!("press_{:03}", rec.index);
    let mut buf = Vec::new();
    r.disparity.write_csv(&mut buf)?;
    write_atomic(&out.join(format!("{stem}_disparity.csv")), &buf)?;
    write_json(&out.join(format!("{stem}.json")), &PatchMeta { contact_id: patch.contact_id, center, pose: rec.pose })?;
    let mut buf = Vec::new();
    write_ply_to(&mut buf, &patch.points, None).map_err(io_err(out))?;
    let name = format!("{stem}.ply");
    write_atomic(&out.join(&name), &buf)?;
    Ok(PressOutcome::Ok { markers: r.markers.len(), patch: name, points: patch.points.len() })
}

/// Observed axial displacement of the innermost marker for every press of a
/// sweep scene, paired with the commanded press depth.
pub fn sweep_from_scene(scene_dir: &Path, cfg: &PipelineConfig) -> Result<Vec<SweepRow>> {
    let manifest = SceneManifest::load(scene_dir)?;
    let rc = resolve_config(cfg, Some(&manifest))?;
    let rest = load_frame(scene_dir, &manifest.rest, &rc.detector)?;
    let recon = Reconstructor::new(rc.rig.clone(), rc.skin, rc.refraction, rc.spacing, &rest)?;
    let mut depths: Vec<f64> = manifest.presses.iter().map(|p| p.press.press_depth).collect();
    depths.sort_by(f64::total_cmp);
    depths.dedup();
    manifest
        .presses
        .par_iter()
        .map(|rec| {
            let m = load_frame(scene_dir, &rec.frame, &rc.detector)?;
            let frame = recon.disparity(&m)?;
            let inner = frame
                .entries
                .iter()
                .max_by_key(|e| (e.layer, std::cmp::Reverse(e.id)))
                .ok_or_else(|| PipelineError::Failed(format!("press {}: no markers", rec.index)))?;
            let p = triangulate_raw(inner.left, inner.right, &recon.rig)?;
            let r = recon.rest_point(inner.id).expect("rest frame codes every id");
            Ok(SweepRow {
                step_index: depths.iter().position(|&d| d == rec.press.press_depth).unwrap_or(0),
                true_disp_mm: rec.press.press_depth,
                observed_disp_mm: r.z - p.z,
            })
        })
        .collect()
}

/// Fits the gel index from a sweep CSV or a simulated sweep scene directory.
/// Writes `sweep.csv` next to `out` when the input was a scene.
pub fn calibrate(input: &Path, cfg: &PipelineConfig, out: &Path, timestamp: u64) -> Result<CalibrationRecord> {
    let rows = if input.is_dir() {
        let rows = sweep_from_scene(input, cfg)?;
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows)?;
        write_atomic(&out.with_file_name("sweep.csv"), &buf)?;
        rows
    } else {
        read_sweep_csv(File::open(input).map_err(io_err(input))?)?
    };
    let cal = calibrate_n_gel(&average_repeats(&rows))?;
    let record = CalibrationRecord::new(&cal, timestamp);
    record.save(out)?;
    Ok(record)
}

/// Merged surface and the naive union it replaces.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchOutput {
    pub merged: Vec<WorldPoint>,
    pub grid: HeightGrid,
    pub naive: Vec<WorldPoint>,
}

/// Loads `press_*.ply` patches from a reconstruction directory in file-name
/// order.
pub fn load_patches(dir: &Path) -> Result<Vec<ContactPatch>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "ply")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("press_"))
        })
        .collect();
    files.sort();
    files
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let meta_path = f.with_extension("json");
            let (id, pose) = if meta_path.exists() {
                let m: PatchMeta = read_json(&meta_path)?;
                (m.contact_id, m.pose)
            } else {
                (k as u32, Pose::identity())
            };
            Ok(ContactPatch::new(id, read_ply(f)?, pose))
        })
        .collect()
}

/// Stitches the patches of `dir` and writes `merged.ply`, `naive.ply` and
/// `heightmap.{csv,png,json}` into `out`.
pub fn stitch_dir(dir: &Path, params: &StitchParams, out: &Path) -> Result<StitchOutput> {
    let patches = load_patches(dir)?;
    if patches.is_empty() {
        return Err(PipelineError::Config(format!("{}: no press_*.ply patches", dir.display())));
    }
    let g = stitch(&patches, params)?;
    let grid = g.grid.expect("stitch rasterizes");
    let naive = naive_union(&patches);
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    for (name, pts) in [("merged.ply", &g.points), ("naive.ply", &naive)] {
        let mut buf = Vec::new();
        write_ply_to(&mut buf, pts, None).map_err(io_err(out))?;
        write_atomic(&out.join(name), &buf)?;
    }
    grid.save_all(out, "heightmap")?;
    Ok(StitchOutput { merged: g.points, grid, naive })
}

/// Summary written by [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub points: usize,
    /// RMS against the truth (skin for a single press, object otherwise).
    pub rms: f64,
    pub max_abs: f64,
    pub profile: Option<ErrorProfile>,
    pub sine: Option<SineErrors>,
}

/// Reads a reconstruction: a point file (`.ply`, `.csv`) or a heightmap
/// sidecar (`.json`) whose grid sits next to it as CSV.
pub fn load_recon_points(path: &Path) -> Result<Vec<[f64; 3]>> {
    if path.extension().is_some_and(|e| e == "json") {
        let meta = GridSidecar::load(path)?;
        let grid = HeightGrid::read_csv(&path.with_extension("csv"), &meta)?;
        return Ok(grid.occupied().collect());
    }
    Ok(crate::io::read_points(path)?.into_iter().map(|p| [p.x, p.y, p.z]).collect())
}

/// Compares a reconstruction with a scene's ground truth. With `press`, the
/// reference is that press's skin restricted to the contact region;
/// otherwise the object itself. Gaussian objects get a radial profile with
/// `bin_width` bins, sine objects the upper-surface and valley metrics.
pub fn evaluate(
    scene_dir: &Path,
    recon: &[[f64; 3]],
    press: Option<usize>,
    bin_width: f64,
) -> Result<EvaluationReport> {
    let manifest = SceneManifest::load(scene_dir)?;
    let pts: Vec<[f64; 3]> = match press {
        Some(i) => {
            let rec = manifest
                .presses
                .iter()
                .find(|p| p.index == i)
                .ok_or_else(|| PipelineError::Config(format!("scene has no press {i}")))?;
            let field = manifest.skin_truth(&rec.press);
            let kept: Vec<[f64; 3]> = recon.iter().copied().filter(|&[x, y, _]| field.in_contact(x, y)).collect();
            let rms = points_rms(&kept, &field).ok_or(EvalError::EmptySupport)?;
            let max_abs = kept.iter().map(|&[x, y, z]| (z - field.eval(x, y)).abs()).fold(0.0, f64::max);
            return finish(&manifest, kept, rms, max_abs, bin_width);
        }
        None => recon.to_vec(),
    };
    let rms = points_rms(&pts, &manifest.object).ok_or(EvalError::EmptySupport)?;
    let max_abs = pts.iter().map(|&[x, y, z]| (z - manifest.object.eval(x, y)).abs()).fold(0.0, f64::max);
    finish(&manifest, pts, rms, max_abs, bin_width)
}

fn finish(
    manifest: &SceneManifest,
    pts: Vec<[f64; 3]>,
    rms: f64,
    max_abs: f64,
    bin_width: f64,
) -> Result<EvaluationReport> {
    let profile = match manifest.object {
        ObjectSurface::Gaussian { center, .. } => {
            let r_max = pts.iter().map(|p| (p[0] - center[0]).hypot(p[1] - center[1])).fold(0.0, f64::max);
            let n = ((r_max / bin_width).floor() as usize + 1).max(1);
            let edges: Vec<f64> = (0..=n).map(|k| k as f64 * bin_width).collect();
            Some(radial_error_points(&pts, &manifest.object, center, &edges)?)
        }
        _ => None,
    };
    let sine = match manifest.object {
        ObjectSurface::Sine { .. } => Some(sine_errors_points(&pts, &manifest.object)?),
        _ => None,
    };
    Ok(EvaluationReport { points: pts.len(), rms, max_abs, profile, sine })
}

/// Writes `report.json` and, when present, `profile.csv`.
pub fn write_evaluation(report: &EvaluationReport, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join("report.json"), report)?;
    if let Some(p) = &report.profile {
        let mut buf = Vec::new();
        p.write_csv(&mut buf)?;
        write_atomic(&out.join("profile.csv"), &buf)?;
    }
    Ok(())
}

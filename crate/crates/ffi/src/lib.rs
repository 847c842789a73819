//! C interface to the tacstereo inverse pipeline.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a [`TsStatus`];
//! on failure [`ts_last_error`] describes what went wrong on the calling
//! thread. Points are in millimetres in the left camera frame.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tacstereo::detection::DetectionError;
use tacstereo::dtrc::DtrcError;
use tacstereo::geometry::{triangulate_raw, GeometryError};
use tacstereo::pipeline::{PipelineError, StereoMarkers};
use tacstereo::surface::SurfaceError;
use tacstereo::{
    detect_markers, CameraRig, DetectorParams, GrayImage, PatternSpec, PixelPoint, Pose, Reconstructor,
    RefractionParams, SkinParams, SurfaceModel,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The output buffer is too small; the needed length was written.
    BufferTooSmall = 3,
    Io = 4,
    Detection = 5,
    /// Markers could not be coded or matched between views.
    Coding = 6,
    Geometry = 7,
    Surface = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsPattern {
    Circular = 0,
    Hexagon = 1,
    Square = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TsPixel {
    pub u: f64,
    pub v: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TsPoint3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Sensor construction and gel parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsSensorParams {
    pub pattern: TsPattern,
    /// Pin height (mm).
    pub pin_height: f64,
    /// Skin thickness (mm).
    pub skin_thickness: f64,
    /// Marker pitch (mm).
    pub marker_pitch: f64,
    pub n_gel: f64,
    pub n_air: f64,
}

/// Opaque stereo camera rig.
pub struct TsRig(CameraRig);

/// Opaque inverse model holding the rest reference.
pub struct TsReconstructor(Reconstructor);

/// Opaque reconstructed skin of one press.
pub struct TsSurface {
    model: SurfaceModel,
    markers: Vec<(usize, TsPoint3)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(TsStatus, String);

impl Fail {
    fn null(what: &str) -> Self {
        Fail(TsStatus::NullPointer, format!("{what} is null"))
    }

    fn arg(msg: impl Into<String>) -> Self {
        Fail(TsStatus::InvalidArgument, msg.into())
    }
}

impl From<PipelineError> for Fail {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Config(_) => TsStatus::InvalidArgument,
            PipelineError::Io(_) => TsStatus::Io,
            PipelineError::Detection(_) => TsStatus::Detection,
            PipelineError::Dtrc(_) => TsStatus::Coding,
            PipelineError::Geometry(GeometryError::Io(_)) => TsStatus::Io,
            PipelineError::Geometry(GeometryError::InvalidParameters(_) | GeometryError::Parse(_)) => {
                TsStatus::InvalidArgument
            }
            PipelineError::Geometry(_) => TsStatus::Geometry,
            PipelineError::Surface(SurfaceError::InvalidParams(_)) => TsStatus::InvalidArgument,
            PipelineError::Surface(_) => TsStatus::Surface,
            _ => TsStatus::Internal,
        };
        Fail(status, e.to_string())
    }
}

impl From<DetectionError> for Fail {
    fn from(e: DetectionError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<GeometryError> for Fail {
    fn from(e: GeometryError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<DtrcError> for Fail {
    fn from(e: DtrcError) -> Self {
        PipelineError::from(e).into()
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            TsStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::null(what))
}

unsafe fn pixels(p: *const TsPixel, n: usize, what: &str) -> Result<Vec<PixelPoint>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(Fail::null(what));
    }
    Ok(std::slice::from_raw_parts(p, n).iter().map(|q| PixelPoint::new(q.u, q.v)).collect())
}

fn finite(name: &str, v: f64) -> Result<f64, Fail> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Fail::arg(format!("{name} must be finite, got {v}")))
    }
}

fn boxed<T>(slot: &mut *mut T, v: T) {
    *slot = Box::into_raw(Box::new(v));
}

/// Message of the last failed call on this thread, or NULL if none.
///
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Defaults of the reference sensor for `pattern`.
#[no_mangle]
pub extern "C" fn ts_sensor_params_default(pattern: TsPattern) -> TsSensorParams {
    let skin = SkinParams::default();
    let refr = RefractionParams::default();
    TsSensorParams {
        pattern,
        pin_height: skin.pin_height,
        skin_thickness: skin.skin_thickness,
        marker_pitch: skin.marker_pitch,
        n_gel: refr.n_gel,
        n_air: refr.n_air,
    }
}

/// Rectified pinhole pair with focal length in pixels and baseline in mm.
///
/// # Safety
/// `out_rig` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ts_rig_ideal(
    focal: f64,
    baseline: f64,
    width: u32,
    height: u32,
    out_rig: *mut *mut TsRig,
) -> TsStatus {
    guard(|| {
        let slot = out(out_rig, "out_rig")?;
        if !(focal > 0.0 && baseline.is_finite() && baseline != 0.0 && width > 0 && height > 0) {
            return Err(Fail::arg(format!(
                "rig needs positive focal and size and a nonzero baseline, got f={focal} b={baseline} {width}x{height}"
            )));
        }
        boxed(slot, TsRig(CameraRig::ideal(focal, baseline, width, height)));
        Ok(())
    })
}

/// Loads a rig from a TOML calibration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_rig` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ts_rig_load(path: *const c_char, out_rig: *mut *mut TsRig) -> TsStatus {
    guard(|| {
        let slot = out(out_rig, "out_rig")?;
        let path = CStr::from_ptr(deref(path, "path")?).to_str().map_err(|_| Fail::arg("path is not UTF-8"))?;
        boxed(slot, TsRig(CameraRig::from_file(Path::new(path))?));
        Ok(())
    })
}

/// # Safety
/// `rig` must come from a `ts_rig_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ts_rig_free(rig: *mut TsRig) {
    if !rig.is_null() {
        drop(Box::from_raw(rig));
    }
}

/// Triangulates one matched marker from raw (distorted) pixel centres.
///
/// # Safety
/// `rig` must be a live handle and `out_point` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_triangulate(
    rig: *const TsRig,
    left: TsPixel,
    right: TsPixel,
    out_point: *mut TsPoint3,
) -> TsStatus {
    guard(|| {
        let rig = deref(rig, "rig")?;
        let slot = out(out_point, "out_point")?;
        for (n, v) in [("left.u", left.u), ("left.v", left.v), ("right.u", right.u), ("right.v", right.v)] {
            finite(n, v)?;
        }
        let p = triangulate_raw(PixelPoint::new(left.u, left.v), PixelPoint::new(right.u, right.v), &rig.0)?;
        *slot = TsPoint3 { x: p.x, y: p.y, z: p.z };
        Ok(())
    })
}

/// Detects marker centres in one 8-bit grayscale view (dark markers on a
/// light background, row-major, `stride` bytes per row).
///
/// Writes up to `capacity` centres and always sets `out_count` to the number
/// found; returns `TS_STATUS_BUFFER_TOO_SMALL` if they did not all fit.
///
/// # Safety
/// `pixels` must hold `stride * height` bytes; `centers` must hold
/// `capacity` entries unless `capacity` is 0.
#[no_mangle]
pub unsafe extern "C" fn ts_detect_markers(
    pixels: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    centers: *mut TsPixel,
    capacity: usize,
    out_count: *mut usize,
) -> TsStatus {
    guard(|| {
        let count = out(out_count, "out_count")?;
        let src = deref(pixels, "pixels")?;
        if width == 0 || height == 0 || stride < width {
            return Err(Fail::arg(format!("bad image layout {width}x{height} stride {stride}")));
        }
        let bytes = std::slice::from_raw_parts(src, stride * (height - 1) + width);
        let data = (0..height)
            .flat_map(|y| bytes[y * stride..y * stride + width].iter().map(|&b| f64::from(b) / 255.0))
            .collect();
        let img = GrayImage::from_data(width, height, data)?;
        let blobs = detect_markers(&img, &DetectorParams::default())?;
        *count = blobs.len();
        if blobs.len() > capacity {
            return Err(Fail(TsStatus::BufferTooSmall, format!("{} markers, buffer holds {capacity}", blobs.len())));
        }
        if !blobs.is_empty() {
            let dst = std::slice::from_raw_parts_mut(out(centers, "centers")?, blobs.len());
            for (d, b) in dst.iter_mut().zip(&blobs) {
                *d = TsPixel { u: b.center.u, v: b.center.v };
            }
        }
        Ok(())
    })
}

/// Builds the inverse model from the marker centres of the undeformed frame.
///
/// # Safety
/// `rig` and `params` must be valid; the point arrays must hold the given
/// counts; `out_recon` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ts_reconstructor_new(
    rig: *const TsRig,
    params: *const TsSensorParams,
    rest_left: *const TsPixel,
    n_left: usize,
    rest_right: *const TsPixel,
    n_right: usize,
    out_recon: *mut *mut TsReconstructor,
) -> TsStatus {
    guard(|| {
        let slot = out(out_recon, "out_recon")?;
        let rig = deref(rig, "rig")?;
        let p = deref(params, "params")?;
        let pattern = match p.pattern {
            TsPattern::Circular => PatternSpec::circular(),
            TsPattern::Hexagon => PatternSpec::hexagon(),
            TsPattern::Square => PatternSpec::square(),
        };
        for (n, v) in
            [("pin_height", p.pin_height), ("skin_thickness", p.skin_thickness), ("marker_pitch", p.marker_pitch)]
        {
            if !(finite(n, v)? > 0.0) {
                return Err(Fail::arg(format!("{n} must be positive, got {v}")));
            }
        }
        if !(finite("n_gel", p.n_gel)? >= 1.0 && finite("n_air", p.n_air)? > 0.0) {
            return Err(Fail::arg(format!("implausible refractive indices n_gel={} n_air={}", p.n_gel, p.n_air)));
        }
        let skin = SkinParams {
            pin_height: p.pin_height,
            skin_thickness: p.skin_thickness,
            marker_pitch: p.marker_pitch,
            pattern,
        };
        let refraction = RefractionParams { n_gel: p.n_gel, n_air: p.n_air };
        let rest = StereoMarkers {
            left: pixels(rest_left, n_left, "rest_left")?,
            right: pixels(rest_right, n_right, "rest_right")?,
        };
        let r = Reconstructor::new(rig.0.clone(), skin, refraction, 0.5 * p.marker_pitch, &rest)?;
        boxed(slot, TsReconstructor(r));
        Ok(())
    })
}

/// # Safety
/// `recon` must come from [`ts_reconstructor_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ts_reconstructor_free(recon: *mut TsReconstructor) {
    if !recon.is_null() {
        drop(Box::from_raw(recon));
    }
}

/// Reconstructs the skin surface of one pressed frame.
///
/// # Safety
/// `recon` must be live; the point arrays must hold the given counts;
/// `out_surface` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ts_reconstruct(
    recon: *const TsReconstructor,
    left: *const TsPixel,
    n_left: usize,
    right: *const TsPixel,
    n_right: usize,
    out_surface: *mut *mut TsSurface,
) -> TsStatus {
    guard(|| {
        let slot = out(out_surface, "out_surface")?;
        let r = deref(recon, "recon")?;
        let m = StereoMarkers { left: pixels(left, n_left, "left")?, right: pixels(right, n_right, "right")? };
        let res = r.0.reconstruct(&m, &Pose::identity())?;
        let markers = res.markers.iter().map(|&(id, p)| (id, TsPoint3 { x: p.x, y: p.y, z: p.z })).collect();
        boxed(slot, TsSurface { model: res.surface, markers });
        Ok(())
    })
}

/// # Safety
/// `surface` must come from [`ts_reconstruct`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ts_surface_free(surface: *mut TsSurface) {
    if !surface.is_null() {
        drop(Box::from_raw(surface));
    }
}

/// Skin depth at (x, y). Fails with `TS_STATUS_INVALID_ARGUMENT` outside
/// the marker footprint.
///
/// # Safety
/// `surface` must be live and `out_z` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_surface_eval(surface: *const TsSurface, x: f64, y: f64, out_z: *mut f64) -> TsStatus {
    guard(|| {
        let s = deref(surface, "surface")?;
        let slot = out(out_z, "out_z")?;
        finite("x", x)?;
        finite("y", y)?;
        if !s.model.contains(x, y) {
            return Err(Fail::arg(format!("({x}, {y}) is outside the marker footprint")));
        }
        *slot = s.model.eval(x, y);
        Ok(())
    })
}

/// Unit normal of the skin at (x, y), oriented with positive z.
///
/// # Safety
/// `surface` must be live and `out_normal` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_surface_normal(
    surface: *const TsSurface,
    x: f64,
    y: f64,
    out_normal: *mut TsPoint3,
) -> TsStatus {
    guard(|| {
        let s = deref(surface, "surface")?;
        let slot = out(out_normal, "out_normal")?;
        finite("x", x)?;
        finite("y", y)?;
        if !s.model.contains(x, y) {
            return Err(Fail::arg(format!("({x}, {y}) is outside the marker footprint")));
        }
        let [nx, ny, nz] = s.model.normal(x, y);
        *slot = TsPoint3 { x: nx, y: ny, z: nz };
        Ok(())
    })
}

/// Number of markers the surface was fitted to.
///
/// # Safety
/// `surface` must be live or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ts_surface_marker_count(surface: *const TsSurface) -> usize {
    surface.as_ref().map_or(0, |s| s.markers.len())
}

/// Copies the corrected marker positions and their pattern ids.
///
/// # Safety
/// `ids` and `points` must each hold `capacity` entries; either may be NULL
/// to skip it.
#[no_mangle]
pub unsafe extern "C" fn ts_surface_markers(
    surface: *const TsSurface,
    ids: *mut u32,
    points: *mut TsPoint3,
    capacity: usize,
) -> TsStatus {
    guard(|| {
        let s = deref(surface, "surface")?;
        if s.markers.len() > capacity {
            return Err(Fail(
                TsStatus::BufferTooSmall,
                format!("{} markers, buffer holds {capacity}", s.markers.len()),
            ));
        }
        for (i, &(id, p)) in s.markers.iter().enumerate() {
            if !ids.is_null() {
                *ids.add(i) = id as u32;
            }
            if !points.is_null() {
                *points.add(i) = p;
            }
        }
        Ok(())
    })
}

use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use tacstereo::detection::split_stereo_frame;
use tacstereo::pipeline::{Reconstructor, StereoMarkers};
use tacstereo::simulator::{preset, PreparedScene, StereoObservation};
use tacstereo::{detect_markers, DetectorParams, GrayImage, PixelPoint};
use tacstereo_ffi::*;

fn prepared(name: &str) -> PreparedScene {
    let mut s = preset(name).unwrap();
    s.render_images = false;
    s.prepare(Path::new(".")).unwrap()
}

fn ts_pixels(p: &[PixelPoint]) -> Vec<TsPixel> {
    p.iter().map(|q| TsPixel { u: q.u, v: q.v }).collect()
}

fn last_error() -> String {
    let p = ts_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn rig_for(p: &PreparedScene) -> *mut TsRig {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rig.toml");
    std::fs::write(&path, p.rig.to_toml_string()).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut rig = ptr::null_mut();
    assert_eq!(unsafe { ts_rig_load(c.as_ptr(), &mut rig) }, TsStatus::Ok, "{}", last_error());
    rig
}

struct Recon(*mut TsReconstructor);

impl Drop for Recon {
    fn drop(&mut self) {
        unsafe { ts_reconstructor_free(self.0) }
    }
}

fn reconstructor(p: &PreparedScene, rig: *const TsRig, rest: &StereoObservation) -> Recon {
    let mut params = ts_sensor_params_default(TsPattern::Hexagon);
    params.pin_height = p.skin.pin_height;
    params.skin_thickness = p.skin.skin_thickness;
    params.marker_pitch = p.skin.marker_pitch;
    params.n_gel = p.scene.refraction.n_gel;
    params.n_air = p.scene.refraction.n_air;
    let (l, r) = (ts_pixels(&rest.left), ts_pixels(&rest.right));
    let mut out = ptr::null_mut();
    let s = unsafe { ts_reconstructor_new(rig, &params, l.as_ptr(), l.len(), r.as_ptr(), r.len(), &mut out) };
    assert_eq!(s, TsStatus::Ok, "{}", last_error());
    Recon(out)
}

#[test]
fn version_and_defaults() {
    let v = unsafe { CStr::from_ptr(ts_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let d = ts_sensor_params_default(TsPattern::Square);
    assert_eq!(d.pattern, TsPattern::Square);
    assert!(d.n_gel > d.n_air && d.marker_pitch > 0.0);
}

#[test]
fn null_and_bad_arguments_report_errors() {
    let mut rig = ptr::null_mut();
    assert_eq!(unsafe { ts_rig_ideal(400.0, 10.0, 640, 480, ptr::null_mut()) }, TsStatus::NullPointer);
    assert!(last_error().contains("out_rig"));
    assert_eq!(unsafe { ts_rig_ideal(-1.0, 10.0, 640, 480, &mut rig) }, TsStatus::InvalidArgument);
    assert!(rig.is_null());
    assert_eq!(unsafe { ts_rig_load(ptr::null(), &mut rig) }, TsStatus::NullPointer);
    let missing = CString::new("/nonexistent/rig.toml").unwrap();
    assert_eq!(unsafe { ts_rig_load(missing.as_ptr(), &mut rig) }, TsStatus::Io);

    assert_eq!(unsafe { ts_rig_ideal(400.0, 10.0, 640, 480, &mut rig) }, TsStatus::Ok);
    let mut pt = TsPoint3::default();
    let px = TsPixel { u: 320.0, v: 240.0 };
    assert_eq!(unsafe { ts_triangulate(rig, px, px, &mut pt) }, TsStatus::Geometry);
    let nan = TsPixel { u: f64::NAN, v: 0.0 };
    assert_eq!(unsafe { ts_triangulate(rig, nan, px, &mut pt) }, TsStatus::InvalidArgument);

    let params = ts_sensor_params_default(TsPattern::Hexagon);
    let few = [TsPixel { u: 1.0, v: 1.0 }; 3];
    let mut recon = ptr::null_mut();
    let s = unsafe { ts_reconstructor_new(rig, &params, few.as_ptr(), 3, few.as_ptr(), 3, &mut recon) };
    assert_eq!(s, TsStatus::Coding, "{}", last_error());
    assert!(recon.is_null());
    let s = unsafe { ts_reconstructor_new(rig, &params, ptr::null(), 5, few.as_ptr(), 3, &mut recon) };
    assert_eq!(s, TsStatus::NullPointer);
    unsafe { ts_rig_free(rig) };
    unsafe { ts_rig_free(ptr::null_mut()) };
    assert_eq!(unsafe { ts_surface_marker_count(ptr::null()) }, 0);
}

#[test]
fn triangulation_matches_core() {
    let mut rig = ptr::null_mut();
    assert_eq!(unsafe { ts_rig_ideal(442.0, 12.0, 640, 480, &mut rig) }, TsStatus::Ok);
    let mut pt = TsPoint3::default();
    let (l, r) = (TsPixel { u: 300.0, v: 250.0 }, TsPixel { u: 350.0, v: 250.0 });
    assert_eq!(unsafe { ts_triangulate(rig, l, r, &mut pt) }, TsStatus::Ok);
    let core = tacstereo::CameraRig::ideal(442.0, 12.0, 640, 480);
    let want =
        tacstereo::geometry::triangulate_raw(PixelPoint::new(l.u, l.v), PixelPoint::new(r.u, r.v), &core).unwrap();
    assert_eq!((pt.x, pt.y, pt.z), (want.x, want.y, want.z));
    assert!((pt.z - 442.0 * 12.0 / 50.0).abs() < 1e-9);
    unsafe { ts_rig_free(rig) };
}

#[test]
fn detection_matches_core_on_quantized_frame() {
    let p = prepared("flat");
    let frame = p.render(&p.rest_observation().unwrap(), 3, 0).unwrap();
    let (left, _) = split_stereo_frame(&frame).unwrap();
    let bytes = left.to_luma8().into_raw();
    let (w, h) = (left.width(), left.height());
    // Pad rows to exercise the stride.
    let stride = w + 7;
    let mut padded = vec![0u8; stride * h];
    for y in 0..h {
        padded[y * stride..y * stride + w].copy_from_slice(&bytes[y * w..(y + 1) * w]);
    }

    let mut count = 0;
    let s = unsafe { ts_detect_markers(padded.as_ptr(), w, h, stride, ptr::null_mut(), 0, &mut count) };
    assert_eq!(s, TsStatus::BufferTooSmall);
    assert_eq!(count, 127);
    let mut centers = vec![TsPixel::default(); count];
    let s = unsafe { ts_detect_markers(padded.as_ptr(), w, h, stride, centers.as_mut_ptr(), count, &mut count) };
    assert_eq!(s, TsStatus::Ok, "{}", last_error());

    let img = GrayImage::from_data(w, h, bytes.iter().map(|&b| f64::from(b) / 255.0).collect()).unwrap();
    let want = detect_markers(&img, &DetectorParams::default()).unwrap();
    assert_eq!(centers, want.iter().map(|b| TsPixel { u: b.center.u, v: b.center.v }).collect::<Vec<_>>());
}

#[test]
fn reconstruction_matches_core() {
    let p = prepared("gaussian-s50");
    let rig = rig_for(&p);
    let rest = p.rest_observation().unwrap();
    let recon = reconstructor(&p, rig, &rest);

    let sim = p.simulate(0).unwrap();
    let (l, r) = (ts_pixels(&sim.observation.left), ts_pixels(&sim.observation.right));
    let mut surf = ptr::null_mut();
    let s = unsafe { ts_reconstruct(recon.0, l.as_ptr(), l.len(), r.as_ptr(), r.len(), &mut surf) };
    assert_eq!(s, TsStatus::Ok, "{}", last_error());

    let m = |o: &StereoObservation| StereoMarkers { left: o.left.clone(), right: o.right.clone() };
    let core =
        Reconstructor::new(p.rig.clone(), p.skin, p.scene.refraction, 0.5 * p.skin.marker_pitch, &m(&rest)).unwrap();
    let want = core.reconstruct(&m(&sim.observation), &tacstereo::Pose::identity()).unwrap();

    let n = unsafe { ts_surface_marker_count(surf) };
    assert_eq!(n, want.markers.len());
    let mut ids = vec![0u32; n];
    let mut pts = vec![TsPoint3::default(); n];
    assert_eq!(
        unsafe { ts_surface_markers(surf, ids.as_mut_ptr(), pts.as_mut_ptr(), n - 1) },
        TsStatus::BufferTooSmall
    );
    assert_eq!(unsafe { ts_surface_markers(surf, ids.as_mut_ptr(), pts.as_mut_ptr(), n) }, TsStatus::Ok);
    for ((id, pt), (wid, wp)) in ids.iter().zip(&pts).zip(&want.markers) {
        assert_eq!(*id as usize, *wid);
        assert_eq!((pt.x, pt.y, pt.z), (wp.x, wp.y, wp.z));
    }

    let c = pts.iter().fold([0.0, 0.0], |a, q| [a[0] + q.x / n as f64, a[1] + q.y / n as f64]);
    let mut z = 0.0;
    assert_eq!(unsafe { ts_surface_eval(surf, c[0], c[1], &mut z) }, TsStatus::Ok);
    assert_eq!(z, want.surface.eval(c[0], c[1]));
    let mut nrm = TsPoint3::default();
    assert_eq!(unsafe { ts_surface_normal(surf, c[0], c[1], &mut nrm) }, TsStatus::Ok);
    assert!(((nrm.x * nrm.x + nrm.y * nrm.y + nrm.z * nrm.z).sqrt() - 1.0).abs() < 1e-12 && nrm.z > 0.0);
    assert_eq!(unsafe { ts_surface_eval(surf, c[0] + 1e4, c[1], &mut z) }, TsStatus::InvalidArgument);
    assert!(last_error().contains("footprint"));

    unsafe { ts_surface_free(surf) };
    unsafe { ts_rig_free(rig) };
}

#[test]
fn handles_are_usable_across_threads() {
    let p = prepared("flat");
    let rig = rig_for(&p);
    let rest = p.rest_observation().unwrap();
    let recon = reconstructor(&p, rig, &rest);
    let sim = p.simulate(0).unwrap();
    let (l, r) = (ts_pixels(&sim.observation.left), ts_pixels(&sim.observation.right));
    let addr = recon.0 as usize;
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| {
                let mut surf = ptr::null_mut();
                let st =
                    unsafe { ts_reconstruct(addr as *const _, l.as_ptr(), l.len(), r.as_ptr(), r.len(), &mut surf) };
                assert_eq!(st, TsStatus::Ok);
                assert_eq!(unsafe { ts_surface_marker_count(surf) }, 127);
                unsafe { ts_surface_free(surf) };
            });
        }
    });
    unsafe { ts_rig_free(rig) };
}

#[test]
fn header_declares_every_export() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/tacstereo.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> =
        src.lines().filter_map(|l| l.split("extern \"C\" fn ").nth(1)).map(|l| l.split('(').next().unwrap()).collect();
    assert!(exports.len() >= 14);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    for t in ["typedef struct TsRig TsRig;", "typedef struct TsSurface TsSurface;", "TS_STATUS_BUFFER_TOO_SMALL = 3"] {
        assert!(header.contains(t), "{t}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let o = match Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&dir)
            .arg("-")
            .stdin(std::process::Stdio::piped())
            .stderr(std::process::Stdio::piped())
            .spawn()
        {
            Ok(mut child) => {
                use std::io::Write;
                child
                    .stdin
                    .take()
                    .unwrap()
                    .write_all(b"#include \"tacstereo.h\"\nint main(void) { return TS_STATUS_OK; }\n")
                    .unwrap();
                child.wait_with_output().unwrap()
            }
            Err(_) => {
                eprintln!("{cc} not found, skipping");
                continue;
            }
        };
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}

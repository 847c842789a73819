//! Stereo marker-based tactile sensing.
//!
//! The inverse pipeline turns a pair of tactile camera frames into a 3D skin
//! surface:
//!
//! 1. [`detection`]: sub-pixel Determinant-of-Hessian blob detection.
//! 2. [`dtrc`]: Delaunay ring coding, which gives every marker the same id in
//!    both views and across frames.
//! 3. [`geometry`]: rectified stereo triangulation.
//! 4. [`refraction`]: depth correction for the transparent gel body.
//! 5. [`surface`]: marker surface fit, inverse-normal pin offset, skin fit.
//! 6. [`stitching`]: merging overlapping contact patches and mollifier
//!    smoothing of the global heightmap.
//!
//! [`simulator`] is the matching forward model and the oracle for the tests;
//! [`evaluation`] computes error profiles; [`raster`] holds height grids; [`pipeline`] wires the stages
//! together for the command-line tool.

pub mod detection;
pub mod dtrc;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod refraction;
pub mod simulator;
pub mod stitching;
pub mod surface;

pub use detection::{detect_markers, split_stereo_frame, Blob, DetectorParams, GrayImage};
pub use dtrc::{
    build_mesh, code_frame, extract_edge_ring, match_stereo, track, CodedFrame, DisparityFrame, MarkerMesh,
    PatternKind, PatternSpec,
};
pub use evaluation::{radial_error, sine_errors, ErrorProfile};
pub use geometry::{project, triangulate, undistort, CameraIntrinsics, CameraRig, PixelPoint, WorldPoint};
pub use pipeline::{PipelineConfig, Reconstructor};
pub use raster::HeightGrid;
pub use refraction::{calibrate_n_gel, correct_depth, RefractionParams};
pub use simulator::{deform_skin, observe, place_markers, plan_zigzag, ObjectSurface, PressSpec, ScanPlan};
pub use stitching::{merge_patches, mollify, rasterize, stitch, ContactPatch, Pose, StitchParams};
pub use surface::{reconstruct_skin, SkinParams, SurfaceModel};

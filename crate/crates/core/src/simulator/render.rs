use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, SimError, StereoObservation};
use crate::detection::GrayImage;
use crate::geometry::{CameraRig, PixelPoint};

/// Marker dot diameter (mm).
pub const MARKER_DIAMETER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub background: f64,
    pub amplitude: f64,
    /// Standard deviation of additive pixel noise.
    #[serde(default)]
    pub noise: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self { background: 0.0, amplitude: 0.8, noise: 0.0 }
    }
}

/// Draws isotropic Gaussian spots. Spot `k` has standard deviation
/// `sigmas[k]` pixels and is summed over a 4-sigma window.
pub fn render_view(spots: &[PixelPoint], sigmas: &[f64], width: usize, height: usize, p: &RenderParams) -> GrayImage {
    let mut img = GrayImage::filled(width, height, p.background);
    for (c, &s) in spots.iter().zip(sigmas) {
        let r = 4.0 * s;
        let x0 = (c.u - r).floor().max(0.0) as usize;
        let y0 = (c.v - r).floor().max(0.0) as usize;
        let x1 = ((c.u + r).ceil() as isize).min(width as isize - 1);
        let y1 = ((c.v + r).ceil() as isize).min(height as isize - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let d2 = (x as f64 - c.u).powi(2) + (y as f64 - c.v).powi(2);
                let v = img.get(x, y) + p.amplitude * (-d2 / (2.0 * s * s)).exp();
                img.set(x, y, v);
            }
        }
    }
    img
}

fn add_noise(img: &mut GrayImage, sigma: f64, seed: u64, stream: u64) -> Result<(), SimError> {
    if sigma == 0.0 {
        return Ok(());
    }
    let dist = Normal::new(0.0, sigma).map_err(|e| SimError::InvalidScene(format!("noise {sigma}: {e}")))?;
    let mut rng = stream_rng(seed, stream);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(x, y) + dist.sample(&mut rng);
            img.set(x, y, v);
        }
    }
    Ok(())
}

/// Side-by-side stereo frame (left half, right half). Spot size follows the
/// apparent depth of each marker. Noise is drawn from `seed` on streams
/// `2 * stream` and `2 * stream + 1`.
pub fn render_stereo(
    obs: &StereoObservation,
    rig: &CameraRig,
    p: &RenderParams,
    seed: u64,
    stream: u64,
) -> Result<GrayImage, SimError> {
    let (w, h) = (rig.image_width as usize, rig.image_height as usize);
    let sl: Vec<f64> = obs.apparent.iter().map(|a| 0.5 * MARKER_DIAMETER * rig.left.fx / a.z).collect();
    let sr: Vec<f64> = obs.apparent.iter().map(|a| 0.5 * MARKER_DIAMETER * rig.right.fx / a.z).collect();
    let mut left = render_view(&obs.left, &sl, w, h, p);
    let mut right = render_view(&obs.right, &sr, w, h, p);
    add_noise(&mut left, p.noise, seed, 2 * stream)?;
    add_noise(&mut right, p.noise, seed, 2 * stream + 1)?;
    GrayImage::concat_horizontal(&left, &right).map_err(|e| SimError::InvalidScene(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{detect_markers, DetectorParams};

    #[test]
    fn empty_frame_is_background() {
        let img = render_view(&[], &[], 8, 6, &RenderParams::default());
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_spot_round_trip() {
        let c = PixelPoint::new(100.5, 200.25);
        let img = render_view(&[c], &[2.0], 640, 480, &RenderParams::default());
        let blobs = detect_markers(&img, &DetectorParams::new(1.0, 4.0)).unwrap();
        assert_eq!(blobs.len(), 1);
        assert!(blobs[0].center.distance(&c) < 0.25);
    }

    #[test]
    fn noise_is_seeded() {
        let obs = StereoObservation { left: vec![], right: vec![], apparent: vec![] };
        let rig = CameraRig::ideal(500.0, 10.0, 32, 16);
        let p = RenderParams { noise: 0.02, ..RenderParams::default() };
        let a = render_stereo(&obs, &rig, &p, 7, 0).unwrap();
        let b = render_stereo(&obs, &rig, &p, 7, 0).unwrap();
        let c = render_stereo(&obs, &rig, &p, 8, 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!((a.width(), a.height()), (64, 16));
    }
}

//! Sub-pixel marker detection with a scale-normalized Determinant-of-Hessian
//! blob detector.

mod image;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelPoint;

pub use self::image::{split_stereo_frame, GrayImage};

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
    #[error("image i/o: {0}")]
    Image(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Detected blob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: PixelPoint,
    /// Gaussian scale (px) at which the response peaked.
    pub scale: f64,
    /// Scale-normalized determinant-of-Hessian response.
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Threshold {
    /// Fraction of the strongest response in the frame.
    Relative(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub scale_min: f64,
    pub scale_max: f64,
    pub num_scales: usize,
    pub threshold: Threshold,
    /// Responses at or below this are never blobs, whatever the threshold.
    pub min_response: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self::for_marker(1.0, 45.0, 442.37)
    }
}

impl DetectorParams {
    pub fn new(scale_min: f64, scale_max: f64) -> Self {
        Self { scale_min, scale_max, num_scales: 5, threshold: Threshold::Relative(0.1), min_response: 1e-4 }
    }

    /// Scale range bracketing a circular marker of `diameter` mm seen at
    /// `depth` mm through a lens of `focal` px.
    pub fn for_marker(diameter: f64, depth: f64, focal: f64) -> Self {
        let sigma = 0.5 * diameter * focal / depth;
        Self::new(0.5 * sigma, 2.0 * sigma)
    }

    pub fn scales(&self) -> Vec<f64> {
        if self.num_scales == 1 {
            return vec![self.scale_min];
        }
        let ratio = (self.scale_max / self.scale_min).ln() / (self.num_scales - 1) as f64;
        (0..self.num_scales).map(|i| self.scale_min * (ratio * i as f64).exp()).collect()
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(self.scale_min > 0.0) || !(self.scale_min < self.scale_max) || self.num_scales < 2 {
            return Err(DetectionError::InvalidParams(format!(
                "need 0 < scale_min < scale_max and >= 2 scales, got [{}, {}] x{}",
                self.scale_min, self.scale_max, self.num_scales
            )));
        }
        Ok(())
    }
}

fn gaussian_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let radius = (4.0 * sigma).ceil() as isize;
    let s2 = sigma * sigma;
    let mut g: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * s2)).exp()).collect();
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    let g1 = (-radius..=radius).zip(&g).map(|(i, v)| -(i as f64) / s2 * v).collect();
    let g2 = (-radius..=radius).zip(&g).map(|(i, v)| ((i * i) as f64 / (s2 * s2) - 1.0 / s2) * v).collect();
    (g, g1, g2)
}

fn convolve_rows(src: &[f64], width: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(width).zip(src.par_chunks(width)).for_each(|(dst, row)| {
        let last = width as isize - 1;
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - radius).clamp(0, last) as usize;
                acc += w * row[sx];
            }
            *d = acc;
        }
    });
    out
}

fn convolve_cols(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let last = height as isize - 1;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, dst)| {
        for (k, w) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - radius).clamp(0, last) as usize;
            let row = &src[sy * width..(sy + 1) * width];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += w * s;
            }
        }
    });
    out
}

/// Scale-normalized DoH response of bright blobs at one scale.
fn doh_response(img: &GrayImage, sigma: f64) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let (g, g1, g2) = gaussian_kernels(sigma);
    let rg = convolve_rows(img.data(), w, &g);
    let rg1 = convolve_rows(img.data(), w, &g1);
    let rg2 = convolve_rows(img.data(), w, &g2);
    let lxx = convolve_cols(&rg2, w, h, &g);
    let lyy = convolve_cols(&rg, w, h, &g2);
    let lxy = convolve_cols(&rg1, w, h, &g1);
    let norm = sigma.powi(4);
    lxx.iter()
        .zip(&lyy)
        .zip(&lxy)
        .map(|((xx, yy), xy)| if xx + yy < 0.0 { norm * (xx * yy - xy * xy) } else { 0.0 })
        .collect()
}

/// Offset of the vertex of a quadratic fitted to the 3x3 neighbourhood.
fn quadratic_peak(r: &[f64], w: usize, x: usize, y: usize) -> (f64, f64) {
    let at = |dx: isize, dy: isize| r[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
    let c = at(0, 0);
    let gx = 0.5 * (at(1, 0) - at(-1, 0));
    let gy = 0.5 * (at(0, 1) - at(0, -1));
    let hxx = at(1, 0) - 2.0 * c + at(-1, 0);
    let hyy = at(0, 1) - 2.0 * c + at(0, -1);
    let hxy = 0.25 * (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1));
    let det = hxx * hyy - hxy * hxy;
    let (mut ox, mut oy) = if det > 0.0 && hxx < 0.0 {
        (-(hyy * gx - hxy * gy) / det, -(hxx * gy - hxy * gx) / det)
    } else {
        let ox = if hxx < 0.0 { -gx / hxx } else { 0.0 };
        let oy = if hyy < 0.0 { -gy / hyy } else { 0.0 };
        (ox, oy)
    };
    if ox.abs() > 1.0 || oy.abs() > 1.0 {
        ox = ox.clamp(-0.5, 0.5);
        oy = oy.clamp(-0.5, 0.5);
    }
    (ox, oy)
}

/// Gaussian spot model of one blob.
#[derive(Clone, Copy)]
struct Spot {
    c: PixelPoint,
    sigma: f64,
    amp: f64,
}

impl Spot {
    fn at(&self, x: f64, y: f64) -> f64 {
        let (du, dv) = (x - self.c.u, y - self.c.v);
        self.amp * (-(du * du + dv * dv) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Deblended sub-pixel refinement. Every spot is re-estimated from a
/// Gaussian-weighted window (width `0.7 * sigma`) over the image minus the
/// background and the modelled light of its neighbours: the centroid gives
/// the centre, the weighted second moment the width, and a weighted least
/// squares fit the amplitude. Sweeps are Jacobi style, so the result does not
/// depend on blob order. An estimate that wanders off is dropped.
fn refine_centers(img: &GrayImage, blobs: &mut [Blob]) {
    const SWEEPS: usize = 6;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut pixels = img.data().to_vec();
    let mid = pixels.len() / 2;
    let background = *pixels.select_nth_unstable_by(mid, f64::total_cmp).1;
    let value = |x: isize, y: isize| img.get(x as usize, y as usize) - background;

    let mut spots: Vec<Spot> = blobs
        .iter()
        .map(|b| {
            let (x, y) = (b.center.u.round() as isize, b.center.v.round() as isize);
            let amp = if x >= 0 && y >= 0 && x < w && y < h { value(x, y) } else { 0.0 };
            Spot { c: b.center, sigma: b.scale, amp }
        })
        .collect();
    for _ in 0..SWEEPS {
        let prev = spots.clone();
        spots.par_iter_mut().enumerate().for_each(|(k, s)| {
            let sw = 0.7 * s.sigma;
            let r = (3.0 * sw).ceil() as isize;
            let (cx, cy) = (s.c.u.round() as isize, s.c.v.round() as isize);
            if cx - r < 0 || cy - r < 0 || cx + r >= w || cy + r >= h {
                return;
            }
            let reach = 3.0 * sw + 4.0 * prev.iter().map(|p| p.sigma).fold(0.0, f64::max);
            let near: Vec<&Spot> = prev
                .iter()
                .enumerate()
                .filter(|&(j, p)| j != k && p.c.distance(&s.c) < reach)
                .map(|(_, p)| p)
                .collect();
            let inv = 1.0 / (2.0 * sw * sw);
            let (mut m0, mut mu, mut mv, mut muu, mut fit_num, mut fit_den) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    let (xf, yf) = (x as f64, y as f64);
                    let rest = value(x, y) - near.iter().map(|p| p.at(xf, yf)).sum::<f64>();
                    let (du, dv) = (xf - s.c.u, yf - s.c.v);
                    let win = (-(du * du + dv * dv) * inv).exp();
                    let wr = win * rest;
                    m0 += wr;
                    mu += wr * du;
                    mv += wr * dv;
                    muu += wr * (du * du + dv * dv);
                    let g = s.at(xf, yf) / s.amp.max(f64::MIN_POSITIVE);
                    fit_num += win * rest * g;
                    fit_den += win * g * g;
                }
            }
            if !(m0 > 0.0) {
                return;
            }
            let (ou, ov) = (mu / m0, mv / m0);
            // Product of the spot and the window has variance
            // sigma^2 sw^2 / (sigma^2 + sw^2) per axis.
            let var = 0.5 * muu / m0 - 0.5 * (ou * ou + ov * ov);
            let c = PixelPoint::new(s.c.u + ou, s.c.v + ov);
            if c.distance(&prev[k].c) > 0.5 * s.sigma {
                return;
            }
            s.c = c;
            if var > 0.0 && var < 0.95 * sw * sw {
                s.sigma = (var * sw * sw / (sw * sw - var)).sqrt().clamp(0.5 * prev[k].sigma, 2.0 * prev[k].sigma);
            }
            if fit_den > 0.0 && fit_num > 0.0 {
                s.amp = fit_num / fit_den;
            }
        });
    }
    for (b, s) in blobs.iter_mut().zip(&spots) {
        if s.c.distance(&b.center) < b.scale {
            b.center = s.c;
        }
    }
}

/// Detects bright circular blobs.
///
/// Candidates are strict local maxima (3x3) of the scale-maximized response,
/// kept when above the threshold and not within one blob diameter
/// (`2 * sqrt(2) * scale`) of a stronger blob. Centers come from a quadratic
/// fit to the response, then refined against a Gaussian spot model.
pub fn detect_markers(img: &GrayImage, params: &DetectorParams) -> Result<Vec<Blob>, DetectionError> {
    params.validate()?;
    if img.is_empty() {
        return Err(DetectionError::MalformedFrame("empty image".into()));
    }
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Ok(Vec::new());
    }
    let scales = params.scales();
    let responses: Vec<Vec<f64>> = scales.iter().map(|&s| doh_response(img, s)).collect();

    let mut best = vec![0.0f64; w * h];
    let mut best_scale = vec![0usize; w * h];
    for (si, resp) in responses.iter().enumerate() {
        for (i, &r) in resp.iter().enumerate() {
            if r > best[i] {
                best[i] = r;
                best_scale[i] = si;
            }
        }
    }
    let peak = best.iter().copied().fold(0.0, f64::max);
    let threshold = match params.threshold {
        Threshold::Relative(f) => f * peak,
        Threshold::Absolute(t) => t,
    }
    .max(params.min_response);

    let mut candidates = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let r = best[i];
            if r <= threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                    // Plateaus resolve to their first pixel in raster order.
                    if (j < i && best[j] >= r) || (j > i && best[j] > r) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((i, r));
            }
        }
    }
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut blobs: Vec<Blob> = Vec::new();
    for (i, r) in candidates {
        let (x, y) = (i % w, i / w);
        let si = best_scale[i];
        let (ox, oy) = quadratic_peak(&responses[si], w, x, y);
        let center = PixelPoint::new(x as f64 + ox, y as f64 + oy);
        let scale = scales[si];
        let suppressed =
            blobs.iter().any(|b| b.center.distance(&center) < 2.0 * std::f64::consts::SQRT_2 * b.scale.max(scale));
        if !suppressed {
            blobs.push(Blob { center, scale, strength: r });
        }
    }
    refine_centers(img, &mut blobs);
    Ok(blobs)
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    frame_id: u32,
    u: f64,
    v: f64,
    scale: f64,
    strength: f64,
}

/// Writes detections as `frame_id,u,v,scale,strength` rows.
pub fn write_detections_csv<W: Write>(out: W, frames: &[(u32, &[Blob])]) -> Result<(), DetectionError> {
    let mut wr = csv::Writer::from_writer(out);
    for (frame_id, blobs) in frames {
        for b in blobs.iter() {
            wr.serialize(DetectionRow {
                frame_id: *frame_id,
                u: b.center.u,
                v: b.center.v,
                scale: b.scale,
                strength: b.strength,
            })?;
        }
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads detections grouped by frame id, preserving file order.
pub fn read_detections_csv<R: Read>(input: R) -> Result<Vec<(u32, Vec<Blob>)>, DetectionError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut frames: Vec<(u32, Vec<Blob>)> = Vec::new();
    for row in rd.deserialize() {
        let row: DetectionRow = row?;
        let blob = Blob { center: PixelPoint::new(row.u, row.v), scale: row.scale, strength: row.strength };
        match frames.iter_mut().find(|(id, _)| *id == row.frame_id) {
            Some((_, v)) => v.push(blob),
            None => frames.push((row.frame_id, vec![blob])),
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spot_image(w: usize, h: usize, spots: &[(f64, f64)], sigma: f64) -> GrayImage {
        let mut img = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v: f64 = spots
                    .iter()
                    .map(|&(cx, cy)| {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        (-d2 / (2.0 * sigma * sigma)).exp()
                    })
                    .sum();
                img.set(x, y, v);
            }
        }
        img
    }

    #[test]
    fn uniform_image_has_no_blobs() {
        for level in [0.0, 0.37, 1.0] {
            let img = GrayImage::filled(64, 48, level);
            let blobs = detect_markers(&img, &DetectorParams::new(1.0, 4.0)).unwrap();
            assert!(blobs.is_empty(), "level {level}: {blobs:?}");
        }
    }

    #[test]
    fn single_spot_subpixel_center() {
        let img = spot_image(220, 260, &[(100.5, 200.25)], 2.0);
        let blobs = detect_markers(&img, &DetectorParams::new(1.0, 4.0)).unwrap();
        assert_eq!(blobs.len(), 1, "{blobs:?}");
        let c = blobs[0].center;
        assert!(c.distance(&PixelPoint::new(100.5, 200.25)) < 0.25, "{c:?}");
    }

    #[test]
    fn response_peaks_near_blob_scale() {
        let img = spot_image(80, 80, &[(40.0, 40.0)], 3.0);
        let params = DetectorParams { num_scales: 9, ..DetectorParams::new(1.5, 6.0) };
        let blobs = detect_markers(&img, &params).unwrap();
        assert_eq!(blobs.len(), 1);
        assert!((blobs[0].scale - 3.0).abs() < 0.5, "{}", blobs[0].scale);
    }

    #[test]
    fn dark_blobs_are_ignored() {
        let bright = spot_image(60, 60, &[(30.0, 30.0)], 2.0);
        let data = bright.data().iter().map(|v| 1.0 - v).collect();
        let dark = GrayImage::from_data(60, 60, data).unwrap();
        assert!(detect_markers(&dark, &DetectorParams::new(1.0, 4.0)).unwrap().is_empty());
    }

    #[test]
    fn integer_shift_moves_centers_exactly() {
        let spots = [(40.3, 50.7), (80.0, 52.1), (61.6, 90.2)];
        let img = spot_image(160, 160, &spots, 2.5);
        let params = DetectorParams::new(1.5, 5.0);
        let a = detect_markers(&img, &params).unwrap();
        let b = detect_markers(&img.shifted(7, -4, 0.0), &params).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert!((q.center.u - p.center.u - 7.0).abs() < 1e-9);
            assert!((q.center.v - p.center.v + 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn close_spots_both_found() {
        let img = spot_image(100, 60, &[(40.0, 30.0), (56.0, 30.0)], 2.5);
        let blobs = detect_markers(&img, &DetectorParams::new(1.5, 5.0)).unwrap();
        assert_eq!(blobs.len(), 2);
    }

    #[test]
    fn rejects_bad_scale_range() {
        let img = GrayImage::new(10, 10);
        assert!(detect_markers(&img, &DetectorParams::new(3.0, 2.0)).is_err());
        assert!(detect_markers(&GrayImage::new(0, 0), &DetectorParams::new(1.0, 2.0)).is_err());
    }

    #[test]
    fn scales_are_log_spaced() {
        let s = DetectorParams::new(1.0, 16.0).scales();
        assert_eq!(s.len(), 5);
        for (a, b) in s.iter().zip([1.0, 2.0, 4.0, 8.0, 16.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn detections_csv_roundtrip() {
        let blobs = [
            Blob { center: PixelPoint::new(1.5, 2.25), scale: 3.0, strength: 0.06 },
            Blob { center: PixelPoint::new(10.0, 20.0), scale: 2.0, strength: 0.01 },
        ];
        let mut buf = Vec::new();
        write_detections_csv(&mut buf, &[(0, &blobs[..1]), (3, &blobs[1..])]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("frame_id,u,v,scale,strength"));
        let back = read_detections_csv(&buf[..]).unwrap();
        assert_eq!(back, vec![(0, blobs[..1].to_vec()), (3, blobs[1..].to_vec())]);
    }
}

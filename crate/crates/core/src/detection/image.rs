use std::path::Path;

use image::{ImageBuffer, Luma};

use super::DetectionError;

/// Grayscale image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, DetectionError> {
        if width * height != data.len() {
            return Err(DetectionError::MalformedFrame(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DetectionError::MalformedFrame("intensity outside [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    /// Copies a `w x h` window starting at column `x0`.
    pub fn crop_columns(&self, x0: usize, w: usize) -> GrayImage {
        let mut data = Vec::with_capacity(w * self.height);
        for row in self.data.chunks_exact(self.width) {
            data.extend_from_slice(&row[x0..x0 + w]);
        }
        GrayImage { width: w, height: self.height, data }
    }

    /// Places `left` and `right` side by side.
    pub fn concat_horizontal(left: &GrayImage, right: &GrayImage) -> Result<GrayImage, DetectionError> {
        if left.height != right.height {
            return Err(DetectionError::MalformedFrame("stereo halves differ in height".into()));
        }
        let width = left.width + right.width;
        let mut data = Vec::with_capacity(width * left.height);
        for (a, b) in left.data.chunks_exact(left.width).zip(right.data.chunks_exact(right.width)) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(GrayImage { width, height: left.height, data })
    }

    /// Reads an 8- or 16-bit grayscale PNG, or a binary/ASCII PGM.
    pub fn load(path: &Path) -> Result<GrayImage, DetectionError> {
        let img = image::open(path).map_err(|e| DetectionError::Image(e.to_string()))?;
        let luma = img.to_luma16();
        let (w, h) = luma.dimensions();
        let data = luma.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
        Ok(GrayImage { width: w as usize, height: h as usize, data })
    }

    /// 8-bit encoding.
    pub fn to_luma8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        let raw = self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer sized")
    }

    /// Writes an 8-bit PNG or PGM depending on the extension.
    pub fn save(&self, path: &Path) -> Result<(), DetectionError> {
        self.to_luma8().save(path).map_err(|e| DetectionError::Image(e.to_string()))
    }

    /// Image shifted by an integer offset; uncovered pixels take `fill`.
    pub fn shifted(&self, du: isize, dv: isize, fill: f64) -> GrayImage {
        let mut out = GrayImage::filled(self.width, self.height, fill);
        for y in 0..self.height as isize {
            let sy = y - dv;
            if sy < 0 || sy >= self.height as isize {
                continue;
            }
            for x in 0..self.width as isize {
                let sx = x - du;
                if sx < 0 || sx >= self.width as isize {
                    continue;
                }
                out.data[y as usize * self.width + x as usize] = self.data[sy as usize * self.width + sx as usize];
            }
        }
        out
    }
}

/// Splits a side-by-side stereo frame into its left and right halves.
pub fn split_stereo_frame(img: &GrayImage) -> Result<(GrayImage, GrayImage), DetectionError> {
    if img.width % 2 != 0 {
        return Err(DetectionError::MalformedFrame(format!("odd frame width {}", img.width)));
    }
    let half = img.width / 2;
    Ok((img.crop_columns(0, half), img.crop_columns(half, half)))
}

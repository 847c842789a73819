use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Rigid object surface `z = g(x, y)` in the global frame (mm, `z` up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectSurface {
    Flat {
        #[serde(default)]
        height: f64,
    },
    /// `h * exp(-((x - cx)^2 + (y - cy)^2) / (2 sigma2))`.
    Gaussian {
        h: f64,
        sigma2: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// `amplitude * sin(omega * x)`.
    Sine {
        amplitude: f64,
        omega: f64,
    },
    Heightmap(Heightmap),
}

/// `(g, gx, gy, gxx, gxy, gyy)`.
pub type Derivatives = [f64; 6];

impl ObjectSurface {
    pub fn gaussian(h: f64, sigma2: f64) -> Self {
        Self::Gaussian { h, sigma2, center: [0.0, 0.0] }
    }

    pub fn sine(amplitude: f64, omega: f64) -> Self {
        Self::Sine { amplitude, omega }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Flat { height } => *height,
            Self::Gaussian { h, sigma2, center } => {
                let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                h * (-r2 / (2.0 * sigma2)).exp()
            }
            Self::Sine { amplitude, omega } => amplitude * (omega * x).sin(),
            Self::Heightmap(m) => m.eval(x, y),
        }
    }

    /// Highest point of the object.
    pub fn max_height(&self) -> f64 {
        match self {
            Self::Flat { height } => *height,
            Self::Gaussian { h, .. } => h.max(0.0),
            Self::Sine { amplitude, .. } => amplitude.abs(),
            Self::Heightmap(m) => m.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Height and first and second partial derivatives. Heightmaps use
    /// central differences at one cell.
    pub fn derivatives(&self, x: f64, y: f64) -> Derivatives {
        match self {
            Self::Flat { height } => [*height, 0.0, 0.0, 0.0, 0.0, 0.0],
            Self::Gaussian { h, sigma2, center } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let g = h * (-(dx * dx + dy * dy) / (2.0 * sigma2)).exp();
                let s = *sigma2;
                [
                    g,
                    -g * dx / s,
                    -g * dy / s,
                    g * (dx * dx / s - 1.0) / s,
                    g * dx * dy / (s * s),
                    g * (dy * dy / s - 1.0) / s,
                ]
            }
            Self::Sine { amplitude, omega } => {
                let (s, c) = (omega * x).sin_cos();
                [amplitude * s, amplitude * omega * c, 0.0, -amplitude * omega * omega * s, 0.0, 0.0]
            }
            Self::Heightmap(m) => {
                let h = m.resolution;
                let f = |x, y| m.eval(x, y);
                let c = f(x, y);
                [
                    c,
                    (f(x + h, y) - f(x - h, y)) / (2.0 * h),
                    (f(x, y + h) - f(x, y - h)) / (2.0 * h),
                    (f(x + h, y) - 2.0 * c + f(x - h, y)) / (h * h),
                    (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h),
                    (f(x, y + h) - 2.0 * c + f(x, y - h)) / (h * h),
                ]
            }
        }
    }

    /// Mean curvature, positive where the surface bulges upward.
    pub fn mean_curvature(&self, x: f64, y: f64) -> f64 {
        let [_, gx, gy, gxx, gxy, gyy] = self.derivatives(x, y);
        let w = 1.0 + gx * gx + gy * gy;
        -((1.0 + gy * gy) * gxx - 2.0 * gx * gy * gxy + (1.0 + gx * gx) * gyy) / (2.0 * w.powf(1.5))
    }
}

/// Sampled terrain, bilinear between samples and clamped at the edges.
/// Sample `(i, j)` sits at `origin + (i, j) * resolution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightmap {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub cols: usize,
    pub rows: usize,
    pub heights: Vec<f64>,
}

/// Scale metadata stored next to an ingested heightmap as `<name>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightmapMeta {
    pub mm_per_pixel: f64,
    /// Millimetres per intensity level (PNG) or per CSV unit.
    pub mm_per_unit: f64,
    #[serde(default)]
    pub origin: [f64; 2],
    #[serde(default)]
    pub z_offset: f64,
}

impl Heightmap {
    pub fn new(
        origin: [f64; 2],
        resolution: f64,
        cols: usize,
        rows: usize,
        heights: Vec<f64>,
    ) -> Result<Self, SimError> {
        if cols < 2 || rows < 2 || heights.len() != cols * rows || !(resolution > 0.0) {
            return Err(SimError::InvalidScene(format!(
                "heightmap needs >= 2x2 samples and a positive resolution, got {cols}x{rows} / {} values",
                heights.len()
            )));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(SimError::InvalidScene("non-finite heightmap sample".into()));
        }
        Ok(Self { origin, resolution, cols, rows, heights })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin[0]) / self.resolution).clamp(0.0, (self.cols - 1) as f64);
        let fy = ((y - self.origin[1]) / self.resolution).clamp(0.0, (self.rows - 1) as f64);
        let (i, j) = ((fx.floor() as usize).min(self.cols - 2), (fy.floor() as usize).min(self.rows - 2));
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let at = |i: usize, j: usize| self.heights[j * self.cols + i];
        let a = at(i, j) * (1.0 - tx) + at(i + 1, j) * tx;
        let b = at(i, j + 1) * (1.0 - tx) + at(i + 1, j + 1) * tx;
        a * (1.0 - ty) + b * ty
    }

    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        let max = [
            self.origin[0] + (self.cols - 1) as f64 * self.resolution,
            self.origin[1] + (self.rows - 1) as f64 * self.resolution,
        ];
        (self.origin, max)
    }

    /// Loads a 16-bit grayscale PNG (top row = largest `y`) or a headerless
    /// CSV grid (first row = smallest `y`), scaled by the `.json` sidecar.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let meta_path = path.with_extension("json");
        let meta: HeightmapMeta = serde_json::from_str(
            &std::fs::read_to_string(&meta_path).map_err(|e| SimError::Io(format!("{}: {e}", meta_path.display())))?,
        )
        .map_err(|e| SimError::InvalidScene(format!("{}: {e}", meta_path.display())))?;
        let (cols, rows, raw) = match path.extension().and_then(|e| e.to_str()) {
            Some("png") => {
                let img = image::open(path).map_err(|e| SimError::Io(e.to_string()))?.to_luma16();
                let (w, h) = img.dimensions();
                let (w, h) = (w as usize, h as usize);
                let mut raw = vec![0.0; w * h];
                for (x, y, p) in img.enumerate_pixels() {
                    raw[(h - 1 - y as usize) * w + x as usize] = p.0[0] as f64;
                }
                (w, h, raw)
            }
            Some("csv") => {
                let mut rd = csv::ReaderBuilder::new()
                    .has_headers(false)
                    .from_path(path)
                    .map_err(|e| SimError::Io(e.to_string()))?;
                let mut raw = Vec::new();
                let mut cols = 0;
                let mut rows = 0;
                for rec in rd.records() {
                    let rec = rec.map_err(|e| SimError::Io(e.to_string()))?;
                    if rows == 0 {
                        cols = rec.len();
                    } else if rec.len() != cols {
                        return Err(SimError::InvalidScene(format!("ragged heightmap row {rows}")));
                    }
                    for f in rec.iter() {
                        raw.push(f.trim().parse::<f64>().map_err(|e| SimError::InvalidScene(e.to_string()))?);
                    }
                    rows += 1;
                }
                (cols, rows, raw)
            }
            _ => return Err(SimError::InvalidScene(format!("{}: expected .png or .csv", path.display()))),
        };
        let heights = raw.into_iter().map(|v| meta.z_offset + v * meta.mm_per_unit).collect();
        Self::new(meta.origin, meta.mm_per_pixel, cols, rows, heights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_apex_curvature() {
        let g = ObjectSurface::gaussian(5.0, 50.0);
        assert!((g.mean_curvature(0.0, 0.0) - 0.1).abs() < 1e-12);
        assert_eq!(g.eval(0.0, 0.0), 5.0);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let h = 1e-4;
        for s in [ObjectSurface::gaussian(5.0, 10.0), ObjectSurface::sine(2.5, std::f64::consts::PI / 15.0)] {
            for (x, y) in [(1.0, 2.0), (-3.0, 0.5), (4.0, -4.0)] {
                let d = s.derivatives(x, y);
                let gx = (s.eval(x + h, y) - s.eval(x - h, y)) / (2.0 * h);
                let gy = (s.eval(x, y + h) - s.eval(x, y - h)) / (2.0 * h);
                let gxx = (s.eval(x + h, y) - 2.0 * d[0] + s.eval(x - h, y)) / (h * h);
                assert!((d[1] - gx).abs() < 1e-6 && (d[2] - gy).abs() < 1e-6);
                assert!((d[3] - gxx).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn heightmap_bilinear_and_clamped() {
        let m = Heightmap::new([0.0, 0.0], 1.0, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.eval(0.5, 0.5), 1.5);
        assert_eq!(m.eval(-5.0, -5.0), 0.0);
        assert_eq!(m.eval(5.0, 5.0), 3.0);
        assert!(Heightmap::new([0.0, 0.0], 1.0, 1, 2, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn heightmap_ingestion_png_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let meta = HeightmapMeta { mm_per_pixel: 0.5, mm_per_unit: 0.001, origin: [1.0, 2.0], z_offset: 0.0 };
        let json = serde_json::to_string(&meta).unwrap();
        // 3 columns x 2 rows, bottom row (y = 2.0) first.
        let levels = [[100u16, 200, 300], [400, 500, 600]];
        let png = dir.path().join("t.png");
        let img = image::ImageBuffer::from_fn(3, 2, |x, y| image::Luma([levels[1 - y as usize][x as usize]]));
        img.save(&png).unwrap();
        std::fs::write(dir.path().join("t.json"), &json).unwrap();
        let csv = dir.path().join("c.csv");
        std::fs::write(&csv, "100,200,300\n400,500,600\n").unwrap();
        std::fs::write(dir.path().join("c.json"), &json).unwrap();
        for path in [png, csv] {
            let m = Heightmap::load(&path).unwrap();
            assert_eq!((m.cols, m.rows), (3, 2));
            assert!((m.eval(1.0, 2.0) - 0.1).abs() < 1e-12);
            assert!((m.eval(2.0, 2.5) - 0.6).abs() < 1e-12);
        }
    }
}

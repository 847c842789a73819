//! Regular height grids with absent cells, and their file formats.
//!
//! Cell `(i, j)` is centred at `origin + (i, j) * resolution`; `i` runs along
//! `x` (columns), `j` along `y` (rows). Grids built with [`HeightGrid::aligned`]
//! snap their centres to integer multiples of the resolution, so grids from
//! different sources share cells.

use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("image: {0}")]
    Image(String),
    #[error("sidecar: {0}")]
    Sidecar(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub cols: usize,
    pub rows: usize,
    values: Vec<Option<f64>>,
}

/// Metadata written next to CSV and PNG heightmaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub origin_x: f64,
    pub origin_y: f64,
    pub resolution: f64,
    pub cols: usize,
    pub rows: usize,
    /// Height of PNG level 1; level 0 marks absent cells.
    pub z_offset: f64,
    /// Millimetres per PNG level.
    pub z_scale: f64,
}

impl HeightGrid {
    pub fn empty(origin: [f64; 2], resolution: f64, cols: usize, rows: usize) -> Self {
        Self { origin, resolution, cols, rows, values: vec![None; cols * rows] }
    }

    /// Grid snapped to multiples of `resolution` that covers the box
    /// `[min, max]`.
    pub fn aligned(min: [f64; 2], max: [f64; 2], resolution: f64) -> Self {
        let i0 = (min[0] / resolution).round() as i64;
        let j0 = (min[1] / resolution).round() as i64;
        let i1 = (max[0] / resolution).round() as i64;
        let j1 = (max[1] / resolution).round() as i64;
        let cols = (i1 - i0 + 1).max(1) as usize;
        let rows = (j1 - j0 + 1).max(1) as usize;
        Self::empty([i0 as f64 * resolution, j0 as f64 * resolution], resolution, cols, rows)
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + i as f64 * self.resolution, self.origin[1] + j as f64 * self.resolution]
    }

    /// Cell containing `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin[0]) / self.resolution).round();
        let j = ((y - self.origin[1]) / self.resolution).round();
        if i < 0.0 || j < 0.0 || i >= self.cols as f64 || j >= self.rows as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[j * self.cols + i]
    }

    pub fn set(&mut self, i: usize, j: usize, z: Option<f64>) {
        self.values[j * self.cols + i] = z;
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Option<f64>] {
        &mut self.values
    }

    /// Occupied cells as `(x, y, z)`.
    pub fn occupied(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.values.iter().enumerate().filter_map(move |(k, v)| {
            v.map(|z| {
                let c = self.center(k % self.cols, k / self.cols);
                [c[0], c[1], z]
            })
        })
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.occupied_count();
        (n > 0).then(|| self.values.iter().flatten().sum::<f64>() / n as f64)
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.values.iter().flatten();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), &z| (lo.min(z), hi.max(z))))
    }

    fn sidecar(&self) -> GridSidecar {
        let (lo, hi) = self.min_max().unwrap_or((0.0, 0.0));
        let span = hi - lo;
        GridSidecar {
            origin_x: self.origin[0],
            origin_y: self.origin[1],
            resolution: self.resolution,
            cols: self.cols,
            rows: self.rows,
            z_offset: lo,
            z_scale: if span > 0.0 { span / 65534.0 } else { 1.0 },
        }
    }

    /// Rows of comma-separated heights, row `j = 0` first; absent cells are
    /// empty fields.
    pub fn write_csv(&self, path: &Path) -> Result<(), RasterError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for j in 0..self.rows {
            let row: Vec<String> =
                (0..self.cols).map(|i| self.get(i, j).map(|z| z.to_string()).unwrap_or_default()).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, sidecar: &GridSidecar) -> Result<Self, RasterError> {
        let mut grid =
            Self::empty([sidecar.origin_x, sidecar.origin_y], sidecar.resolution, sidecar.cols, sidecar.rows);
        let mut rd = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut j = 0;
        for rec in rd.records() {
            let rec = rec?;
            if j >= grid.rows || rec.len() != grid.cols {
                return Err(RasterError::Invalid(format!("row {j} does not match {}x{}", grid.cols, grid.rows)));
            }
            for (i, field) in rec.iter().enumerate() {
                let z = if field.trim().is_empty() {
                    None
                } else {
                    Some(field.trim().parse::<f64>().map_err(|e| RasterError::Invalid(e.to_string()))?)
                };
                grid.set(i, j, z);
            }
            j += 1;
        }
        if j != grid.rows {
            return Err(RasterError::Invalid(format!("{j} rows, expected {}", grid.rows)));
        }
        Ok(grid)
    }

    /// 16-bit PNG, row `j = rows - 1` at the top so `+y` points up.
    pub fn to_png16(&self) -> (ImageBuffer<Luma<u16>, Vec<u16>>, GridSidecar) {
        let meta = self.sidecar();
        let img = ImageBuffer::from_fn(self.cols as u32, self.rows as u32, |x, y| {
            let j = self.rows - 1 - y as usize;
            let level = self
                .get(x as usize, j)
                .map(|z| 1 + ((z - meta.z_offset) / meta.z_scale).round().clamp(0.0, 65534.0) as u16)
                .unwrap_or(0);
            Luma([level])
        });
        (img, meta)
    }

    /// Grid from a 16-bit heightmap image and its sidecar.
    pub fn from_png16(img: &ImageBuffer<Luma<u16>, Vec<u16>>, meta: &GridSidecar) -> Self {
        let (w, h) = img.dimensions();
        let mut grid = Self::empty([meta.origin_x, meta.origin_y], meta.resolution, w as usize, h as usize);
        for (x, y, p) in img.enumerate_pixels() {
            let j = h as usize - 1 - y as usize;
            let z = (p.0[0] > 0).then(|| meta.z_offset + (p.0[0] - 1) as f64 * meta.z_scale);
            grid.set(x as usize, j, z);
        }
        grid
    }

    /// Writes `<stem>.csv`, `<stem>.png` and `<stem>.json` into `dir`.
    pub fn save_all(&self, dir: &Path, stem: &str) -> Result<(), RasterError> {
        self.write_csv(&dir.join(format!("{stem}.csv")))?;
        let (img, meta) = self.to_png16();
        img.save(dir.join(format!("{stem}.png"))).map_err(|e| RasterError::Image(e.to_string()))?;
        let json = serde_json::to_string_pretty(&meta).map_err(|e| RasterError::Sidecar(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }
}

impl GridSidecar {
    pub fn load(path: &Path) -> Result<Self, RasterError> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| RasterError::Sidecar(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_grid() -> HeightGrid {
        let mut g = HeightGrid::aligned([-1.0, -0.5], [1.0, 0.5], 0.25);
        for j in 0..g.rows {
            for i in 0..g.cols {
                if (i + j) % 5 != 0 {
                    let c = g.center(i, j);
                    g.set(i, j, Some(c[0] * 0.5 - c[1]));
                }
            }
        }
        g
    }

    #[test]
    fn aligned_grid_snaps_to_resolution() {
        let g = HeightGrid::aligned([0.3, -0.26], [1.1, 0.6], 0.25);
        assert_eq!(g.origin, [0.25, -0.25]);
        assert_eq!(g.cell_of(0.26, -0.2), Some((0, 0)));
        assert_eq!(g.cell_of(-1.0, 0.0), None);
    }

    #[test]
    fn csv_roundtrip_keeps_holes() {
        let dir = tempfile::tempdir().unwrap();
        let g = sample_grid();
        g.save_all(dir.path(), "h").unwrap();
        let meta = GridSidecar::load(&dir.path().join("h.json")).unwrap();
        let back = HeightGrid::read_csv(&dir.path().join("h.csv"), &meta).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn png_roundtrip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let g = sample_grid();
        g.save_all(dir.path(), "h").unwrap();
        let meta = GridSidecar::load(&dir.path().join("h.json")).unwrap();
        let img = image::open(dir.path().join("h.png")).unwrap().to_luma16();
        let back = HeightGrid::from_png16(&img, &meta);
        for (a, b) in g.values().iter().zip(back.values()) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= meta.z_scale),
                (None, None) => {}
                _ => panic!("occupancy changed"),
            }
        }
    }

    #[test]
    fn mean_and_extent() {
        let mut g = HeightGrid::empty([0.0, 0.0], 1.0, 2, 2);
        assert_eq!(g.mean(), None);
        g.set(0, 0, Some(1.0));
        g.set(1, 1, Some(3.0));
        assert_eq!(g.mean(), Some(2.0));
        assert_eq!(g.min_max(), Some((1.0, 3.0)));
        assert_eq!(g.occupied().collect::<Vec<_>>(), vec![[0.0, 0.0, 1.0], [1.0, 1.0, 3.0]]);
    }
}

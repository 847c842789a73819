//! Point cloud files: ASCII PLY and `x,y,z` CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::WorldPoint;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{0}: malformed point file: {1}")]
    Malformed(String, String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

/// Writes an ASCII PLY with optional per-vertex normals.
pub fn write_ply(path: &Path, points: &[WorldPoint], normals: Option<&[[f64; 3]]>) -> Result<(), IoError> {
    let f = File::create(path).map_err(file_err(path))?;
    write_ply_to(BufWriter::new(f), points, normals).map_err(file_err(path))
}

pub fn write_ply_to<W: Write>(mut w: W, points: &[WorldPoint], normals: Option<&[[f64; 3]]>) -> std::io::Result<()> {
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if normals.is_some() {
        writeln!(w, "property double nx\nproperty double ny\nproperty double nz")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in points.iter().enumerate() {
        match normals {
            Some(n) => {
                let n = n[i];
                writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n[0], n[1], n[2])?
            }
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    w.flush()
}

/// Reads vertex positions from an ASCII PLY; extra vertex properties are
/// ignored as long as `x y z` come first.
pub fn read_ply(path: &Path) -> Result<Vec<WorldPoint>, IoError> {
    let name = path.display().to_string();
    let bad = |msg: &str| IoError::Malformed(name.clone(), msg.to_string());
    let f = File::open(path).map_err(file_err(path))?;
    let mut lines = BufReader::new(f).lines();
    let mut next = || -> Result<Option<String>, IoError> { lines.next().transpose().map_err(file_err(path)) };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut count = None;
    loop {
        let line = next()?.ok_or_else(|| bad("unterminated header"))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ascii PLY is supported")),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next()?.ok_or_else(|| bad("truncated vertex list"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("non-numeric vertex"))?;
        if v.len() < 3 {
            return Err(bad("vertex needs x y z"));
        }
        out.push(WorldPoint::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct XyzRow {
    x: f64,
    y: f64,
    z: f64,
}

pub fn write_points_csv(path: &Path, points: &[WorldPoint]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(XyzRow { x: p.x, y: p.y, z: p.z })?;
    }
    w.flush().map_err(file_err(path))
}

pub fn read_points_csv(path: &Path) -> Result<Vec<WorldPoint>, IoError> {
    let mut out = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let r: XyzRow = row?;
        out.push(WorldPoint::new(r.x, r.y, r.z));
    }
    Ok(out)
}

/// Reads `.ply` or `.csv` by extension.
pub fn read_points(path: &Path) -> Result<Vec<WorldPoint>, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        Some("csv") => read_points_csv(path),
        _ => Err(IoError::Malformed(path.display().to_string(), "expected .ply or .csv".into())),
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(file_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(file_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_roundtrip_with_and_without_normals() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![WorldPoint::new(1.0, -2.5, 3.25), WorldPoint::new(0.1, 0.2, 0.3)];
        let normals = [[0.0, 0.0, 1.0], [0.6, 0.0, 0.8]];
        for (name, n) in [("a.ply", Some(&normals[..])), ("b.ply", None)] {
            let path = dir.path().join(name);
            write_ply(&path, &pts, n).unwrap();
            assert_eq!(read_points(&path).unwrap(), pts);
        }
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let pts = vec![WorldPoint::new(1.0, 2.0, 3.0)];
        write_points_csv(&path, &pts).unwrap();
        assert_eq!(read_points(&path).unwrap(), pts);
    }

    #[test]
    fn malformed_ply_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 2\nend_header\n1 2 3\n").unwrap();
        assert!(matches!(read_ply(&path), Err(IoError::Malformed(..))));
        std::fs::write(&path, "nope\n").unwrap();
        assert!(read_ply(&path).is_err());
    }
}

use std::f64::consts::TAU;

use crate::dtrc::{PatternKind, PatternSpec};

// Lattice rotations keep every ring marker a few degrees away from the polar
// angle zero, where the ring coder starts counting; otherwise image noise
// could move the start marker from one end of a ring to the other.
const CIRCULAR_ROTATION_DEG: f64 = 3.75;
const HEXAGON_ROTATION_DEG: f64 = 4.5;
const SQUARE_ROTATION_DEG: f64 = 5.75;

fn rotate(p: [f64; 2], deg: f64) -> [f64; 2] {
    let (s, c) = deg.to_radians().sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn square_side(spec: &PatternSpec) -> usize {
    (spec.expected_count as f64).sqrt().round() as usize
}

/// Marker sites relative to the pattern centre (mm).
pub fn lattice_sites(spec: &PatternSpec, pitch: f64) -> Vec<[f64; 2]> {
    let k = spec.m as i64 - 1;
    let mut out = Vec::with_capacity(spec.expected_count);
    match spec.kind {
        PatternKind::Hexagon => {
            for r in -k..=k {
                for q in -k..=k {
                    if (q + r).abs() <= k {
                        let p = [pitch * (q as f64 + 0.5 * r as f64), pitch * r as f64 * 3f64.sqrt() / 2.0];
                        out.push(rotate(p, HEXAGON_ROTATION_DEG));
                    }
                }
            }
        }
        PatternKind::Circular => {
            out.push([0.0, 0.0]);
            for ring in 1..=k {
                let n = 6 * ring;
                for j in 0..n {
                    let a = CIRCULAR_ROTATION_DEG.to_radians() + TAU * j as f64 / n as f64;
                    out.push([pitch * ring as f64 * a.cos(), pitch * ring as f64 * a.sin()]);
                }
            }
        }
        PatternKind::Square => {
            let n = square_side(spec);
            let h = (n as f64 - 1.0) / 2.0;
            for j in 0..n {
                for i in 0..n {
                    out.push(rotate([pitch * (i as f64 - h), pitch * (j as f64 - h)], SQUARE_ROTATION_DEG));
                }
            }
        }
    }
    out
}

/// Radius of the largest centred disk inside the pattern's outer ring.
pub fn pattern_inradius(spec: &PatternSpec, pitch: f64) -> f64 {
    let k = (spec.m - 1) as f64;
    match spec.kind {
        PatternKind::Hexagon => k * pitch * 3f64.sqrt() / 2.0,
        PatternKind::Circular => k * pitch,
        PatternKind::Square => (square_side(spec) as f64 - 1.0) / 2.0 * pitch,
    }
}

/// Distance from the centre to the farthest marker.
pub fn pattern_radius(spec: &PatternSpec, pitch: f64) -> f64 {
    lattice_sites(spec, pitch).iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max)
}

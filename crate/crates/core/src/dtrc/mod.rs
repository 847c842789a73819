//! Delaunay ring coding.
//!
//! Markers are meshed, then peeled ring by ring from the outside in: the
//! current edge ring is the set of remaining markers with fewer than `l`
//! reciprocal links to other remaining markers. Each ring is ordered by polar
//! angle about its centroid, and markers are numbered by (layer, position in
//! ring). Both stereo views and every frame of a sequence get the same ids, so
//! matching and tracking reduce to joining on id.

mod mesh;

use std::f64::consts::TAU;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelPoint;

pub use self::mesh::{build_mesh, MarkerMesh};

#[derive(Debug, Error)]
pub enum DtrcError {
    #[error("degenerate mesh: {0}")]
    MeshDegenerate(String),
    #[error("edge markers do not form a single ring: {0}")]
    RingTopology(String),
    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),
    #[error("id sets differ: {0}")]
    MatchCardinality(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Circular,
    Hexagon,
    Square,
}

/// Marker layout the coder expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: PatternKind,
    /// Reciprocal links of an internal marker.
    pub l: usize,
    /// Number of rings, counting a lone centre marker as one.
    pub m: usize,
    pub expected_count: usize,
}

impl PatternSpec {
    /// Concentric rings of `6k` markers around a centre marker.
    pub fn circular() -> Self {
        Self::circular_layers(9)
    }

    pub fn circular_layers(m: usize) -> Self {
        Self { kind: PatternKind::Circular, l: 12, m, expected_count: hex_count(m) }
    }

    pub fn hexagon() -> Self {
        Self::hexagon_layers(7)
    }

    pub fn hexagon_layers(m: usize) -> Self {
        Self { kind: PatternKind::Hexagon, l: 12, m, expected_count: hex_count(m) }
    }

    /// `n x n` grid.
    pub fn square() -> Self {
        Self::square_side(11)
    }

    pub fn square_side(n: usize) -> Self {
        Self { kind: PatternKind::Square, l: 16, m: n.div_ceil(2), expected_count: n * n }
    }

    pub fn for_kind(kind: PatternKind) -> Self {
        match kind {
            PatternKind::Circular => Self::circular(),
            PatternKind::Hexagon => Self::hexagon(),
            PatternKind::Square => Self::square(),
        }
    }

    /// Expected size of each ring, outermost first.
    pub fn ring_sizes(&self) -> Vec<usize> {
        match self.kind {
            PatternKind::Circular | PatternKind::Hexagon => {
                (0..self.m).map(|i| if i + 1 == self.m { 1 } else { 6 * (self.m - 1 - i) }).collect()
            }
            PatternKind::Square => {
                let n = (self.expected_count as f64).sqrt().round() as usize;
                (0..self.m)
                    .map(|i| {
                        let side = n - 2 * i;
                        if side == 1 {
                            1
                        } else {
                            4 * (side - 1)
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<(), DtrcError> {
        if !(self.l == 12 || self.l == 16) || self.m == 0 || self.expected_count == 0 {
            return Err(DtrcError::PatternMismatch(format!(
                "unsupported pattern l = {}, m = {}, count = {}",
                self.l, self.m, self.expected_count
            )));
        }
        Ok(())
    }
}

fn hex_count(m: usize) -> usize {
    if m == 0 {
        0
    } else {
        3 * m * (m - 1) + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodedMarker {
    pub id: usize,
    pub position: PixelPoint,
    /// Ring number, 0 outermost.
    pub layer: usize,
    pub ring_index: usize,
    /// Index of the marker in the input point list.
    pub source: usize,
}

/// Markers sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedFrame {
    pub spec: PatternSpec,
    pub markers: Vec<CodedMarker>,
}

impl CodedFrame {
    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn position(&self, id: usize) -> Option<PixelPoint> {
        self.markers.get(id).filter(|m| m.id == id).map(|m| m.position)
    }

    pub fn layers(&self) -> usize {
        self.markers.last().map_or(0, |m| m.layer + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityEntry {
    pub id: usize,
    pub layer: usize,
    pub ring_index: usize,
    pub left: PixelPoint,
    pub right: PixelPoint,
    /// `u_r - u_l` in pixels.
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DisparityFrame {
    pub entries: Vec<DisparityEntry>,
}

/// Current edge ring among `active` nodes, ordered by polar angle about the
/// ring centroid starting from the smallest angle in `[0, 2pi)`.
fn edge_ring(mesh: &MarkerMesh, active: &[bool], l: usize) -> Result<Vec<usize>, DtrcError> {
    let links = |i: usize| 2 * mesh.neighbors(i).iter().filter(|&&j| active[j]).count();
    let ring: Vec<usize> = (0..mesh.len()).filter(|&i| active[i] && links(i) < l).collect();
    if ring.is_empty() {
        return Err(DtrcError::RingTopology("no edge markers".into()));
    }
    if ring.len() == 1 {
        return Ok(ring);
    }
    let nodes = mesh.nodes();
    let n = ring.len() as f64;
    let cu = ring.iter().map(|&i| nodes[i].u).sum::<f64>() / n;
    let cv = ring.iter().map(|&i| nodes[i].v).sum::<f64>() / n;
    let mut keyed: Vec<(f64, usize)> =
        ring.iter().map(|&i| ((nodes[i].v - cv).atan2(nodes[i].u - cu).rem_euclid(TAU), i)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let ordered: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
    let closing = if ordered.len() > 2 { ordered.len() } else { ordered.len() - 1 };
    for k in 0..closing {
        let (a, b) = (ordered[k], ordered[(k + 1) % ordered.len()]);
        if !mesh.is_adjacent(a, b) {
            return Err(DtrcError::RingTopology(format!("consecutive ring markers {a} and {b} are not linked")));
        }
    }
    Ok(ordered)
}

/// Outer edge ring of the full mesh.
pub fn extract_edge_ring(mesh: &MarkerMesh, spec: &PatternSpec) -> Result<Vec<usize>, DtrcError> {
    edge_ring(mesh, &vec![true; mesh.len()], spec.l)
}

/// Assigns ring-coded ids to detected marker centres.
pub fn code_frame(points: &[PixelPoint], spec: &PatternSpec) -> Result<CodedFrame, DtrcError> {
    spec.validate()?;
    if points.len() != spec.expected_count {
        return Err(DtrcError::PatternMismatch(format!(
            "expected {} markers, detected {}",
            spec.expected_count,
            points.len()
        )));
    }
    let mesh = build_mesh(points, spec)?;
    let mut active = vec![true; points.len()];
    let mut remaining = points.len();
    let mut markers = Vec::with_capacity(points.len());
    let mut layer = 0;
    while remaining > 0 {
        if layer == spec.m {
            return Err(DtrcError::PatternMismatch(format!("{remaining} markers left after {} rings", spec.m)));
        }
        let ring = edge_ring(&mesh, &active, spec.l).map_err(|e| match e {
            DtrcError::RingTopology(msg) => DtrcError::PatternMismatch(format!("ring {layer}: {msg}")),
            other => other,
        })?;
        for (ring_index, &i) in ring.iter().enumerate() {
            markers.push(CodedMarker { id: markers.len(), position: points[i], layer, ring_index, source: i });
            active[i] = false;
        }
        remaining -= ring.len();
        layer += 1;
    }
    if layer != spec.m {
        return Err(DtrcError::PatternMismatch(format!("peeled {layer} rings, expected {}", spec.m)));
    }
    Ok(CodedFrame { spec: *spec, markers })
}

fn check_same_ids(a: &CodedFrame, b: &CodedFrame) -> Result<(), DtrcError> {
    if a.spec != b.spec {
        return Err(DtrcError::MatchCardinality("frames coded with different patterns".into()));
    }
    if a.len() != b.len() {
        return Err(DtrcError::MatchCardinality(format!("{} vs {} markers", a.len(), b.len())));
    }
    Ok(())
}

/// Pairs left and right markers by id.
pub fn match_stereo(left: &CodedFrame, right: &CodedFrame) -> Result<DisparityFrame, DtrcError> {
    check_same_ids(left, right)?;
    let entries = left
        .markers
        .iter()
        .zip(&right.markers)
        .map(|(l, r)| DisparityEntry {
            id: l.id,
            layer: l.layer,
            ring_index: l.ring_index,
            left: l.position,
            right: r.position,
            d: r.position.u - l.position.u,
        })
        .collect();
    Ok(DisparityFrame { entries })
}

/// Per-id displacement `(du, dv)` from `prev` to `curr`.
pub fn track(prev: &CodedFrame, curr: &CodedFrame) -> Result<Vec<(usize, [f64; 2])>, DtrcError> {
    check_same_ids(prev, curr)?;
    Ok(prev
        .markers
        .iter()
        .zip(&curr.markers)
        .map(|(a, b)| (a.id, [b.position.u - a.position.u, b.position.v - a.position.v]))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct DisparityRow {
    id: usize,
    layer: usize,
    ring_index: usize,
    u_l: f64,
    v_l: f64,
    u_r: f64,
    v_r: f64,
    d: f64,
}

impl DisparityFrame {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DtrcError> {
        let mut wr = csv::Writer::from_writer(out);
        for e in &self.entries {
            wr.serialize(DisparityRow {
                id: e.id,
                layer: e.layer,
                ring_index: e.ring_index,
                u_l: e.left.u,
                v_l: e.left.v,
                u_r: e.right.u,
                v_r: e.right.v,
                d: e.d,
            })?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, DtrcError> {
        let mut entries = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let r: DisparityRow = row?;
            entries.push(DisparityEntry {
                id: r.id,
                layer: r.layer,
                ring_index: r.ring_index,
                left: PixelPoint::new(r.u_l, r.v_l),
                right: PixelPoint::new(r.u_r, r.v_r),
                d: r.d,
            });
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent lattice builders, so the coder is not tested against the
    // simulator's own layouts.
    fn hex_points(m: usize, pitch: f64, rot_deg: f64, c: (f64, f64)) -> Vec<PixelPoint> {
        let k = m as i64 - 1;
        let (s, co) = rot_deg.to_radians().sin_cos();
        let mut out = Vec::new();
        for q in -k..=k {
            for r in -k..=k {
                if (q + r).abs() > k {
                    continue;
                }
                let x = pitch * (q as f64 + 0.5 * r as f64);
                let y = pitch * (r as f64) * 3f64.sqrt() / 2.0;
                out.push(PixelPoint::new(c.0 + co * x - s * y, c.1 + s * x + co * y));
            }
        }
        out
    }

    fn grid_points(n: usize, pitch: f64, rot_deg: f64) -> Vec<PixelPoint> {
        let (s, co) = rot_deg.to_radians().sin_cos();
        let h = (n as f64 - 1.0) / 2.0;
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (pitch * (i as f64 - h), pitch * (j as f64 - h));
                out.push(PixelPoint::new(320.0 + co * x - s * y, 240.0 + s * x + co * y));
            }
        }
        out
    }

    fn circle_points(m: usize, pitch: f64, rot_deg: f64) -> Vec<PixelPoint> {
        let mut out = vec![PixelPoint::new(320.0, 240.0)];
        for k in 1..m {
            let n = 6 * k;
            for j in 0..n {
                let a = rot_deg.to_radians() + TAU * j as f64 / n as f64;
                out.push(PixelPoint::new(320.0 + pitch * k as f64 * a.cos(), 240.0 + pitch * k as f64 * a.sin()));
            }
        }
        out
    }

    fn internal_links(mesh: &MarkerMesh, ring: &[usize]) -> Vec<usize> {
        (0..mesh.len()).filter(|i| !ring.contains(i)).map(|i| mesh.link_count(i)).collect()
    }

    #[test]
    fn seven_point_hexagon() {
        let pts = hex_points(2, 20.0, 4.5, (100.0, 100.0));
        let spec = PatternSpec::hexagon_layers(2);
        let mesh = build_mesh(&pts, &spec).unwrap();
        let centre = pts.iter().position(|p| p.distance(&PixelPoint::new(100.0, 100.0)) < 1e-9).unwrap();
        assert_eq!(mesh.link_count(centre), 12);
        for i in (0..7).filter(|&i| i != centre) {
            assert!(mesh.link_count(i) < 12);
        }
        let ring = extract_edge_ring(&mesh, &spec).unwrap();
        assert_eq!(ring.len(), 6);
        assert!(!ring.contains(&centre));
    }

    #[test]
    fn hexagon_internal_nodes_have_twelve_links() {
        let spec = PatternSpec::hexagon();
        let pts = hex_points(7, 18.0, 4.5, (320.0, 240.0));
        assert_eq!(pts.len(), 127);
        let mesh = build_mesh(&pts, &spec).unwrap();
        let ring = extract_edge_ring(&mesh, &spec).unwrap();
        assert_eq!(ring.len(), 36);
        assert!(internal_links(&mesh, &ring).iter().all(|&c| c == 12));
    }

    #[test]
    fn square_internal_nodes_have_sixteen_links() {
        let spec = PatternSpec::square();
        let pts = grid_points(11, 20.0, 5.75);
        let mesh = build_mesh(&pts, &spec).unwrap();
        let ring = extract_edge_ring(&mesh, &spec).unwrap();
        assert_eq!(ring.len(), 40);
        let links = internal_links(&mesh, &ring);
        assert_eq!(links.len(), 81);
        assert!(links.iter().all(|&c| c == 16), "{links:?}");
    }

    #[test]
    fn layer_counts_for_all_patterns() {
        let cases = [
            (PatternSpec::hexagon(), hex_points(7, 18.0, 4.5, (320.0, 240.0))),
            (PatternSpec::hexagon_layers(9), hex_points(9, 14.0, 4.5, (320.0, 240.0))),
            (PatternSpec::circular(), circle_points(9, 14.0, 3.75)),
            (PatternSpec::square(), grid_points(11, 20.0, 5.75)),
        ];
        for (spec, pts) in cases {
            let coded = code_frame(&pts, &spec).unwrap();
            assert_eq!(coded.layers(), spec.m, "{:?}", spec.kind);
            let mut sizes = vec![0; spec.m];
            for m in &coded.markers {
                sizes[m.layer] += 1;
            }
            assert_eq!(sizes, spec.ring_sizes(), "{:?}", spec.kind);
            assert!(coded.markers.iter().enumerate().all(|(i, m)| m.id == i));
        }
    }

    #[test]
    fn ring_sizes_match_lattice_combinatorics() {
        assert_eq!(PatternSpec::hexagon().ring_sizes(), vec![36, 30, 24, 18, 12, 6, 1]);
        assert_eq!(PatternSpec::square().ring_sizes(), vec![40, 32, 24, 16, 8, 1]);
        assert_eq!(PatternSpec::circular().expected_count, 217);
        assert_eq!(PatternSpec::hexagon_layers(9).expected_count, 217);
        assert_eq!(PatternSpec::hexagon().expected_count, 127);
    }

    #[test]
    fn coding_is_idempotent_and_permutation_invariant() {
        let spec = PatternSpec::hexagon();
        let pts = hex_points(7, 18.0, 4.5, (320.0, 240.0));
        let a = code_frame(&pts, &spec).unwrap();
        assert_eq!(a, code_frame(&pts, &spec).unwrap());
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(3, 90);
        let b = code_frame(&shuffled, &spec).unwrap();
        for (x, y) in a.markers.iter().zip(&b.markers) {
            assert_eq!(x.position, y.position);
        }
    }

    #[test]
    fn uniform_shift_gives_uniform_disparity() {
        let spec = PatternSpec::hexagon();
        let left: Vec<PixelPoint> = hex_points(7, 18.0, 4.5, (330.0, 240.0));
        let right: Vec<PixelPoint> = left.iter().map(|p| PixelPoint::new(p.u - 10.0, p.v)).collect();
        let l = code_frame(&left, &spec).unwrap();
        let r = code_frame(&right, &spec).unwrap();
        let disp = match_stereo(&l, &r).unwrap();
        assert_eq!(disp.entries.len(), 127);
        for e in &disp.entries {
            assert!((e.d + 10.0).abs() < 1e-9);
            assert_eq!(l.markers[e.id].source, r.markers[e.id].source);
        }
    }

    #[test]
    fn track_identity_is_zero() {
        let spec = PatternSpec::square();
        let coded = code_frame(&grid_points(11, 20.0, 5.75), &spec).unwrap();
        let t = track(&coded, &coded).unwrap();
        assert_eq!(t.len(), 121);
        assert!(t.iter().all(|(_, d)| d == &[0.0, 0.0]));
    }

    #[test]
    fn wrong_count_is_pattern_mismatch() {
        let spec = PatternSpec::hexagon();
        let mut pts = hex_points(7, 18.0, 4.5, (320.0, 240.0));
        pts.pop();
        assert!(matches!(code_frame(&pts, &spec), Err(DtrcError::PatternMismatch(_))));
        // Right count, wrong layout: a 127-point grid fragment does not peel into 7 hex rings.
        let grid: Vec<PixelPoint> = grid_points(12, 15.0, 5.75).into_iter().take(127).collect();
        assert!(code_frame(&grid, &spec).is_err());
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<PixelPoint> = (0..5).map(|i| PixelPoint::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(build_mesh(&pts, &PatternSpec::hexagon()), Err(DtrcError::MeshDegenerate(_))));
        assert!(matches!(build_mesh(&pts[..2], &PatternSpec::hexagon()), Err(DtrcError::MeshDegenerate(_))));
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let a = code_frame(&hex_points(7, 18.0, 4.5, (320.0, 240.0)), &PatternSpec::hexagon()).unwrap();
        let b = code_frame(&grid_points(11, 20.0, 5.75), &PatternSpec::square()).unwrap();
        assert!(matches!(match_stereo(&a, &b), Err(DtrcError::MatchCardinality(_))));
        assert!(matches!(track(&a, &b), Err(DtrcError::MatchCardinality(_))));
    }

    #[test]
    fn disparity_csv_roundtrip() {
        let spec = PatternSpec::hexagon_layers(2);
        let pts = hex_points(2, 20.0, 4.5, (100.0, 100.0));
        let right: Vec<PixelPoint> = pts.iter().map(|p| PixelPoint::new(p.u + 7.25, p.v)).collect();
        let disp = match_stereo(&code_frame(&pts, &spec).unwrap(), &code_frame(&right, &spec).unwrap()).unwrap();
        let mut buf = Vec::new();
        disp.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("id,layer,ring_index,u_l,v_l,u_r,v_r,d"));
        assert_eq!(DisparityFrame::read_csv(&buf[..]).unwrap(), disp);
    }
}

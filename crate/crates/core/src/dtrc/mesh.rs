use std::collections::{BTreeMap, HashMap};

use delaunator::Point;

use super::{DtrcError, PatternSpec};
use crate::geometry::PixelPoint;

/// Hull triangles whose angle opposite a boundary edge exceeds this are
/// slivers between nearly collinear boundary markers.
const SLIVER_ANGLE: f64 = 120.0 * std::f64::consts::PI / 180.0;

/// Smallest angle facing a cell diagonal; sides face about 45 degrees.
const CELL_ANGLE: f64 = 60.0 * std::f64::consts::PI / 180.0;

/// Marker adjacency graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerMesh {
    nodes: Vec<PixelPoint>,
    neighbors: Vec<Vec<usize>>,
}

impl MarkerMesh {
    pub fn nodes(&self) -> &[PixelPoint] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sorted geometric neighbours of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Reciprocal link count: each geometric neighbour contributes one link
    /// in each direction.
    pub fn link_count(&self, i: usize) -> usize {
        2 * self.neighbors[i].len()
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

fn angle_at(c: PixelPoint, a: PixelPoint, b: PixelPoint) -> f64 {
    let (ax, ay) = (a.u - c.u, a.v - c.v);
    let (bx, by) = (b.u - c.u, b.v - c.v);
    let cos = (ax * bx + ay * by) / (ax.hypot(ay) * bx.hypot(by));
    cos.clamp(-1.0, 1.0).acos()
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Builds the marker mesh.
///
/// The Delaunay triangulation is pruned of hull slivers. Edges are then
/// flipped while that brings interior nodes closer to `l / 2` neighbours:
/// strong local stretching (a pin fan at a contact crease) makes Delaunay
/// link a node to the next ring out. For `l = 16` the second diagonal of
/// every quadrilateral cell is added, so internal nodes of a square grid see
/// all 8 neighbours.
pub fn build_mesh(points: &[PixelPoint], spec: &PatternSpec) -> Result<MarkerMesh, DtrcError> {
    if points.len() < 3 {
        return Err(DtrcError::MeshDegenerate(format!("{} points", points.len())));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(DtrcError::MeshDegenerate("non-finite point".into()));
    }
    let pts: Vec<Point> = points.iter().map(|p| Point { x: p.u, y: p.v }).collect();
    let tri = delaunator::triangulate(&pts);
    if tri.triangles.is_empty() {
        return Err(DtrcError::MeshDegenerate("points are collinear".into()));
    }
    let mut tris: Vec<[usize; 3]> = tri.triangles.chunks_exact(3).map(|t| [t[0], t[1], t[2]]).collect();
    tris.sort_unstable();
    let mut alive = vec![true; tris.len()];
    let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (ti, t) in tris.iter().enumerate() {
        for k in 0..3 {
            edge_tris.entry(edge_key(t[k], t[(k + 1) % 3])).or_default().push(ti);
        }
    }
    let live_count = |edge_tris: &HashMap<(usize, usize), Vec<usize>>, alive: &[bool], e| {
        edge_tris[&e].iter().filter(|&&t| alive[t]).count()
    };

    loop {
        let mut changed = false;
        for ti in 0..tris.len() {
            if !alive[ti] {
                continue;
            }
            let t = tris[ti];
            let sliver = (0..3).any(|k| {
                let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                live_count(&edge_tris, &alive, edge_key(a, b)) == 1
                    && angle_at(points[c], points[a], points[b]) > SLIVER_ANGLE
            });
            if sliver {
                alive[ti] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut live: Vec<[usize; 3]> = tris.iter().zip(&alive).filter(|(_, &a)| a).map(|(t, _)| *t).collect();
    if spec.l == 12 {
        regularize(points, &mut live);
    } else {
        regularize_cells(points, &mut live);
    }
    let edge_tris = edge_map(&live);

    let mut neighbors = vec![Vec::new(); points.len()];
    let mut add = |a: usize, b: usize| {
        neighbors[a].push(b);
        neighbors[b].push(a);
    };
    for &(a, b) in edge_tris.keys() {
        add(a, b);
    }
    if spec.l == 16 {
        for (c, d) in cell_diagonals(points, &live, &edge_tris) {
            add(c, d);
        }
    }

    for n in neighbors.iter_mut() {
        n.sort_unstable();
        n.dedup();
    }
    if neighbors.iter().any(Vec::is_empty) {
        return Err(DtrcError::MeshDegenerate("isolated marker after hull pruning".into()));
    }
    Ok(MarkerMesh { nodes: points.to_vec(), neighbors })
}

fn edge_map(tris: &[[usize; 3]]) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut m: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (ti, t) in tris.iter().enumerate() {
        for k in 0..3 {
            m.entry(edge_key(t[k], t[(k + 1) % 3])).or_default().push(ti);
        }
    }
    m
}

fn opposite(t: &[usize; 3], a: usize, b: usize) -> usize {
    t.iter().copied().find(|&v| v != a && v != b).expect("triangle")
}

fn orient(a: PixelPoint, b: PixelPoint, c: PixelPoint) -> f64 {
    (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u)
}

/// Interior-degree bookkeeping for [`regularize`].
struct Flipper<'a> {
    points: &'a [PixelPoint],
    boundary: Vec<bool>,
    degree: Vec<i64>,
}

impl Flipper<'_> {
    fn cost(&self, v: usize, delta: i64) -> i64 {
        if self.boundary[v] {
            0
        } else {
            (self.degree[v] + delta - 6).pow(2) - (self.degree[v] - 6).pow(2)
        }
    }

    /// Legal flips with energy change at most `limit`, best first.
    fn candidates(&self, tris: &[[usize; 3]], limit: i64) -> Vec<(i64, (usize, usize), usize, usize)> {
        let edges = edge_map(tris);
        let mut out = Vec::new();
        for (&(a, b), ts) in &edges {
            let &[t0, t1] = ts.as_slice() else { continue };
            let (c, d) = (opposite(&tris[t0], a, b), opposite(&tris[t1], a, b));
            if edges.contains_key(&edge_key(c, d)) {
                continue;
            }
            let p = self.points;
            if orient(p[c], p[d], p[a]) * orient(p[c], p[d], p[b]) >= 0.0
                || orient(p[a], p[b], p[c]) * orient(p[a], p[b], p[d]) >= 0.0
            {
                continue;
            }
            let delta = self.cost(a, -1) + self.cost(b, -1) + self.cost(c, 1) + self.cost(d, 1);
            if delta <= limit {
                out.push((delta, (a, b), t0, t1));
            }
        }
        out.sort_by_key(|&(delta, e, ..)| (delta, e));
        out
    }

    fn apply(&mut self, tris: &mut [[usize; 3]], (a, b): (usize, usize), t0: usize, t1: usize) {
        let (c, d) = (opposite(&tris[t0], a, b), opposite(&tris[t1], a, b));
        tris[t0] = [a, c, d];
        tris[t1] = [b, c, d];
        self.degree[a] -= 1;
        self.degree[b] -= 1;
        self.degree[c] += 1;
        self.degree[d] += 1;
    }
}

/// Degree regularization by edge flips. Each step takes the flip that most
/// reduces the summed squared deviation of interior degrees from 6, or a
/// neutral flip that enables such a reduction (flip chains across a row of
/// near-cocircular cells need one).
fn regularize(points: &[PixelPoint], tris: &mut [[usize; 3]]) {
    let edges = edge_map(tris);
    let mut f = Flipper { points, boundary: vec![false; points.len()], degree: vec![0; points.len()] };
    for (&(a, b), ts) in &edges {
        f.degree[a] += 1;
        f.degree[b] += 1;
        if ts.len() == 1 {
            f.boundary[a] = true;
            f.boundary[b] = true;
        }
    }
    // The energy is a nonnegative integer and drops every round.
    'round: loop {
        let cands = f.candidates(tris, 0);
        if let Some(&(delta, e, t0, t1)) = cands.first() {
            if delta < 0 {
                f.apply(tris, e, t0, t1);
                continue;
            }
        }
        for &(_, e, t0, t1) in &cands {
            let saved = (tris[t0], tris[t1], f.degree.clone());
            f.apply(tris, e, t0, t1);
            if let Some(&(_, e2, u0, u1)) = f.candidates(tris, -1).first() {
                f.apply(tris, e2, u0, u1);
                continue 'round;
            }
            (tris[t0], tris[t1], f.degree) = saved;
        }
        break;
    }
}

type Pair = ([usize; 3], [usize; 3]);

/// Square-lattice counterpart of [`regularize`]. Degrees include the cell
/// diagonals, which depend on the whole pairing, so every candidate is
/// scored by recomputing them. Only runs when the Delaunay mesh is off.
fn regularize_cells(points: &[PixelPoint], tris: &mut [[usize; 3]]) {
    let edges = edge_map(tris);
    let mut f = Flipper { points, boundary: vec![false; points.len()], degree: vec![0; points.len()] };
    for (&(a, b), ts) in &edges {
        if ts.len() == 1 {
            f.boundary[a] = true;
            f.boundary[b] = true;
        }
    }
    let boundary = f.boundary.clone();
    let energy = |tris: &[[usize; 3]]| {
        let edges = edge_map(tris);
        let mut degree = vec![0i64; points.len()];
        for (a, b) in edges.keys().copied().chain(cell_diagonals(points, tris, &edges)) {
            degree[a] += 1;
            degree[b] += 1;
        }
        (0..points.len()).filter(|&v| !boundary[v]).map(|v| (degree[v] - 8).pow(2)).sum::<i64>()
    };
    let mut current = energy(tris);
    while current > 0 {
        let mut best: Option<(i64, Pair, usize, usize)> = None;
        for (_, e, t0, t1) in f.candidates(tris, i64::MAX) {
            let saved = (tris[t0], tris[t1]);
            f.apply(tris, e, t0, t1);
            let e1 = energy(tris);
            if e1 < current && best.is_none_or(|b| e1 < b.0) {
                best = Some((e1, (tris[t0], tris[t1]), t0, t1));
            }
            (tris[t0], tris[t1]) = saved;
        }
        let Some((e1, (n0, n1), t0, t1)) = best else { break };
        tris[t0] = n0;
        tris[t1] = n1;
        current = e1;
    }
}

/// Second diagonals of quadrilateral cells. Triangle pairs are matched
/// greedily, best first, by the smaller of the two angles facing the shared
/// edge: about 90 degrees across a cell diagonal, about 45 across a side.
fn cell_diagonals(
    points: &[PixelPoint],
    tris: &[[usize; 3]],
    edges: &BTreeMap<(usize, usize), Vec<usize>>,
) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, (usize, usize), usize, usize)> = edges
        .iter()
        .filter_map(|(&(a, b), ts)| {
            let &[t0, t1] = ts.as_slice() else { return None };
            let (c, d) = (opposite(&tris[t0], a, b), opposite(&tris[t1], a, b));
            let score = angle_at(points[c], points[a], points[b]).min(angle_at(points[d], points[a], points[b]));
            (score > CELL_ANGLE).then_some((score, (a, b), t0, t1))
        })
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut used = vec![false; tris.len()];
    let mut out = Vec::new();
    for (_, (a, b), t0, t1) in pairs {
        if used[t0] || used[t1] {
            continue;
        }
        used[t0] = true;
        used[t1] = true;
        out.push((opposite(&tris[t0], a, b), opposite(&tris[t1], a, b)));
    }
    out
}

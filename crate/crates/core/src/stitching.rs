//! Merging overlapping contact patches into one surface.
//!
//! Where two patches overlap, each point is paired with its nearest neighbour
//! in the other patch (in `x, y`) and only the lower of the two survives: the
//! skin overestimates heights toward a patch rim, so the lower reading is the
//! better one. The merged points are rasterized and smoothed with a mollifier.

use std::sync::OnceLock;

use rayon::prelude::*;
use rstar::{primitives::GeomWithData, RTree};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::WorldPoint;
use crate::raster::HeightGrid;

#[derive(Debug, Error)]
pub enum StitchError {
    #[error("mollifier kernel unresolved: resolution {resolution} mm exceeds epsilon/2 = {limit} mm")]
    KernelUnresolved { resolution: f64, limit: f64 },
    #[error("invalid stitch parameters: {0}")]
    InvalidParams(String),
    #[error("no patches to stitch")]
    Empty,
}

/// Rigid transform `p -> R p + t` into the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self::from_translation([0.0; 3])
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation }
    }

    pub fn apply(&self, p: &WorldPoint) -> WorldPoint {
        let r = &self.rotation;
        let t = &self.translation;
        WorldPoint::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + t[0],
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + t[1],
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + t[2],
        )
    }

    /// Direction transform (rotation only).
    pub fn apply_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn inverse(&self) -> Pose {
        let r = &self.rotation;
        let rt = [[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]];
        let t = &self.translation;
        let ti = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        Pose { rotation: rt, translation: ti }
    }
}

/// Points from one press, already in the global frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPatch {
    pub contact_id: u32,
    pub points: Vec<WorldPoint>,
    pub pose: Pose,
}

impl ContactPatch {
    pub fn new(contact_id: u32, points: Vec<WorldPoint>, pose: Pose) -> Self {
        Self { contact_id, points, pose }
    }

    pub fn translated(&self, v: [f64; 3]) -> ContactPatch {
        let points = self.points.iter().map(|p| WorldPoint::new(p.x + v[0], p.y + v[1], p.z + v[2])).collect();
        let mut pose = self.pose;
        for (t, d) in pose.translation.iter_mut().zip(v) {
            *t += d;
        }
        ContactPatch { contact_id: self.contact_id, points, pose }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchParams {
    /// Overlap threshold `T` (mm).
    pub overlap_threshold: f64,
    /// Mollifier radius `epsilon` (mm).
    pub mollifier_epsilon: f64,
    /// Raster cell size (mm).
    pub resolution: f64,
}

impl Default for StitchParams {
    fn default() -> Self {
        Self { overlap_threshold: 0.6, mollifier_epsilon: 0.25, resolution: 0.125 }
    }
}

impl StitchParams {
    pub fn validate(&self) -> Result<(), StitchError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.overlap_threshold) || !ok(self.mollifier_epsilon) || !ok(self.resolution) {
            return Err(StitchError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Overlap split of both patches, as point indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OverlapSplit {
    pub a_overlap: Vec<usize>,
    pub a_rest: Vec<usize>,
    pub b_overlap: Vec<usize>,
    pub b_rest: Vec<usize>,
}

type Indexed = GeomWithData<[f64; 2], usize>;

fn xy_index(points: &[WorldPoint]) -> RTree<Indexed> {
    RTree::bulk_load(points.iter().enumerate().map(|(i, p)| GeomWithData::new([p.x, p.y], i)).collect())
}

/// Nearest neighbour in `tree` for every point, with squared `x, y` distance.
fn nearest_all(points: &[WorldPoint], tree: &RTree<Indexed>) -> Vec<(usize, f64)> {
    points
        .par_iter()
        .map(|p| {
            let q = [p.x, p.y];
            tree.nearest_neighbor(q)
                .map(|n| (n.data, (n.geom()[0] - q[0]).powi(2) + (n.geom()[1] - q[1]).powi(2)))
                .unwrap_or((usize::MAX, f64::INFINITY))
        })
        .collect()
}

fn split(nn: &[(usize, f64)], t2: f64) -> (Vec<usize>, Vec<usize>) {
    (0..nn.len()).partition(|&i| nn[i].1 <= t2)
}

/// A point overlaps when its nearest neighbour in the other patch lies within
/// the threshold in `x, y`.
pub fn classify_overlap(a: &ContactPatch, b: &ContactPatch, p: &StitchParams) -> OverlapSplit {
    let t2 = p.overlap_threshold * p.overlap_threshold;
    let (ta, tb) = (xy_index(&a.points), xy_index(&b.points));
    let (a_overlap, a_rest) = split(&nearest_all(&a.points, &tb), t2);
    let (b_overlap, b_rest) = split(&nearest_all(&b.points, &ta), t2);
    OverlapSplit { a_overlap, a_rest, b_overlap, b_rest }
}

fn keeps(z: f64, partner_z: f64, own_id: u32, partner_id: u32) -> bool {
    z < partner_z || (z == partner_z && own_id < partner_id)
}

/// Overlap points of both patches that are lower than their cross-patch
/// nearest neighbour; equal heights go to the lower contact id.
pub fn extract_contiguous(a: &ContactPatch, b: &ContactPatch, p: &StitchParams) -> Vec<WorldPoint> {
    let t2 = p.overlap_threshold * p.overlap_threshold;
    let (ta, tb) = (xy_index(&a.points), xy_index(&b.points));
    let mut out = Vec::new();
    for (own, other, tree) in [(a, b, &tb), (b, a, &ta)] {
        for (i, (j, d2)) in nearest_all(&own.points, tree).into_iter().enumerate() {
            if d2 <= t2 && keeps(own.points[i].z, other.points[j].z, own.contact_id, other.contact_id) {
                out.push(own.points[i]);
            }
        }
    }
    out
}

/// Merge of two patches: both non-overlap sets plus the lower overlap points.
pub fn merge_pair(a: &ContactPatch, b: &ContactPatch, p: &StitchParams) -> Vec<WorldPoint> {
    let t2 = p.overlap_threshold * p.overlap_threshold;
    let (ta, tb) = (xy_index(&a.points), xy_index(&b.points));
    let mut out = Vec::with_capacity(a.points.len() + b.points.len());
    for (own, other, tree) in [(a, b, &tb), (b, a, &ta)] {
        for (i, (j, d2)) in nearest_all(&own.points, tree).into_iter().enumerate() {
            if d2 > t2 || keeps(own.points[i].z, other.points[j].z, own.contact_id, other.contact_id) {
                out.push(own.points[i]);
            }
        }
    }
    out
}

/// Merged points and, once rasterized, the height grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSurface {
    pub points: Vec<WorldPoint>,
    pub grid: Option<HeightGrid>,
}

/// Folds the patches left to right in the given (acquisition) order. The
/// accumulated surface keeps the id of the first patch.
pub fn merge_patches(patches: &[ContactPatch], p: &StitchParams) -> Result<GlobalSurface, StitchError> {
    p.validate()?;
    let (first, rest) = patches.split_first().ok_or(StitchError::Empty)?;
    let mut acc = first.clone();
    for patch in rest {
        acc.points = merge_pair(&acc, patch, p);
    }
    Ok(GlobalSurface { points: acc.points, grid: None })
}

/// Plain union of all patch points.
pub fn naive_union(patches: &[ContactPatch]) -> Vec<WorldPoint> {
    patches.iter().flat_map(|p| p.points.iter().copied()).collect()
}

/// Bins points into cells of an aligned grid; a cell's height is the
/// inverse-square-distance weighted mean of the points inside it, and cells
/// without points are absent.
pub fn rasterize(points: &[WorldPoint], resolution: f64) -> HeightGrid {
    if points.is_empty() {
        return HeightGrid::empty([0.0, 0.0], resolution, 0, 0);
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for q in points {
        min = [min[0].min(q.x), min[1].min(q.y)];
        max = [max[0].max(q.x), max[1].max(q.y)];
    }
    let mut grid = HeightGrid::aligned(min, max, resolution);
    let n = grid.cols * grid.rows;
    let mut wsum = vec![0.0; n];
    let mut zsum = vec![0.0; n];
    let mut exact: Vec<Option<(f64, usize)>> = vec![None; n];
    let tiny = 1e-9 * resolution;
    for q in points {
        let Some((i, j)) = grid.cell_of(q.x, q.y) else { continue };
        let k = j * grid.cols + i;
        let c = grid.center(i, j);
        let d = (q.x - c[0]).hypot(q.y - c[1]);
        if d < tiny {
            let e = exact[k].get_or_insert((0.0, 0));
            e.0 += q.z;
            e.1 += 1;
        } else {
            let w = 1.0 / (d * d);
            wsum[k] += w;
            zsum[k] += w * q.z;
        }
    }
    for (k, v) in grid.values_mut().iter_mut().enumerate() {
        *v = match exact[k] {
            Some((s, c)) => Some(s / c as f64),
            None if wsum[k] > 0.0 => Some(zsum[k] / wsum[k]),
            None => None,
        };
    }
    grid
}

fn bump(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t)).exp()
    }
}

/// `I`, the integral of `exp(-1/(1 - rho^2))` over the unit disk.
pub fn mollifier_normalization() -> f64 {
    static I: OnceLock<f64> = OnceLock::new();
    *I.get_or_init(|| {
        // pi * int_0^1 exp(-1/(1-t)) dt, composite Simpson; the integrand is
        // flat to all orders at t = 1.
        let n = 20_000;
        let h = 1.0 / n as f64;
        let mut s = bump(0.0) + bump(1.0);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * bump(k as f64 * h);
        }
        std::f64::consts::PI * s * h / 3.0
    })
}

/// Scaled mollifier `phi_eps` at distance `r` from the centre.
pub fn mollifier(r: f64, epsilon: f64) -> f64 {
    let rho = r / epsilon;
    bump(rho * rho) / (mollifier_normalization() * epsilon * epsilon)
}

/// Discrete kernel offsets and weights, normalized to sum to one.
fn discrete_kernel(epsilon: f64, resolution: f64) -> Vec<(isize, isize, f64)> {
    let reach = (epsilon / resolution).ceil() as isize;
    let mut k = Vec::new();
    for dj in -reach..=reach {
        for di in -reach..=reach {
            let r = resolution * ((di * di + dj * dj) as f64).sqrt();
            let w = mollifier(r, epsilon);
            if w > 0.0 {
                k.push((di, dj, w));
            }
        }
    }
    let sum: f64 = k.iter().map(|e| e.2).sum();
    k.iter_mut().for_each(|e| e.2 /= sum);
    k
}

/// Convolves the occupied cells with the mollifier.
///
/// Near holes and edges the kernel is rescaled symmetrically
/// (`K -> S K S`, Sinkhorn) until it is doubly stochastic on the occupied
/// support, which keeps constant fields fixed and preserves the mean.
pub fn mollify(grid: &HeightGrid, p: &StitchParams) -> Result<HeightGrid, StitchError> {
    p.validate()?;
    let limit = p.mollifier_epsilon / 2.0;
    if grid.resolution > limit * (1.0 + 1e-12) {
        return Err(StitchError::KernelUnresolved { resolution: grid.resolution, limit });
    }
    let kernel = discrete_kernel(p.mollifier_epsilon, grid.resolution);
    let (cols, rows) = (grid.cols as isize, grid.rows as isize);
    let occ: Vec<bool> = grid.values().iter().map(Option::is_some).collect();

    let apply = |x: &[f64]| -> Vec<f64> {
        (0..grid.rows)
            .into_par_iter()
            .flat_map_iter(|j| {
                let x = &x;
                let occ = &occ;
                let kernel = &kernel;
                (0..grid.cols).map(move |i| {
                    let k = j * grid.cols + i;
                    if !occ[k] {
                        return 0.0;
                    }
                    let mut acc = 0.0;
                    for &(di, dj, w) in kernel {
                        let (ii, jj) = (i as isize + di, j as isize + dj);
                        if ii < 0 || jj < 0 || ii >= cols || jj >= rows {
                            continue;
                        }
                        let kk = jj as usize * grid.cols + ii as usize;
                        if occ[kk] {
                            acc += w * x[kk];
                        }
                    }
                    acc
                })
            })
            .collect()
    };

    let mut s: Vec<f64> = occ.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    for _ in 0..10_000 {
        let ks = apply(&s);
        let mut worst: f64 = 0.0;
        for k in 0..s.len() {
            if occ[k] {
                worst = worst.max((s[k] * ks[k] - 1.0).abs());
                s[k] = (s[k] / ks[k]).sqrt();
            }
        }
        if worst < 1e-14 {
            break;
        }
    }

    let sz: Vec<f64> = grid.values().iter().zip(&s).map(|(v, s)| v.map_or(0.0, |z| s * z)).collect();
    let ksz = apply(&sz);
    let mut out = grid.clone();
    for (k, v) in out.values_mut().iter_mut().enumerate() {
        if v.is_some() {
            *v = Some(s[k] * ksz[k]);
        }
    }
    Ok(out)
}

/// Merge, rasterize and smooth.
pub fn stitch(patches: &[ContactPatch], p: &StitchParams) -> Result<GlobalSurface, StitchError> {
    let merged = merge_patches(patches, p)?;
    let grid = mollify(&rasterize(&merged.points, p.resolution), p)?;
    Ok(GlobalSurface { points: merged.points, grid: Some(grid) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_patch(id: u32, cx: f64, cy: f64, radius: f64, step: f64, f: impl Fn(f64, f64) -> f64) -> ContactPatch {
        let n = (radius / step).ceil() as i64;
        let mut pts = Vec::new();
        for j in -n..=n {
            for i in -n..=n {
                let (x, y) = (cx + i as f64 * step, cy + j as f64 * step);
                if (x - cx).hypot(y - cy) <= radius {
                    pts.push(WorldPoint::new(x, y, f(x, y)));
                }
            }
        }
        ContactPatch::new(id, pts, Pose::from_translation([cx, cy, 0.0]))
    }

    #[test]
    fn disjoint_and_identical_patches() {
        let p = StitchParams::default();
        let a = disk_patch(0, 0.0, 0.0, 5.0, 0.5, |_, _| 0.0);
        let far = disk_patch(1, 100.0, 0.0, 5.0, 0.5, |_, _| 0.0);
        let s = classify_overlap(&a, &far, &p);
        assert!(s.a_overlap.is_empty() && s.b_overlap.is_empty());
        let same = ContactPatch { contact_id: 1, ..a.clone() };
        let s = classify_overlap(&a, &same, &p);
        assert_eq!(s.a_overlap.len(), a.points.len());
        assert!(s.a_rest.is_empty());
    }

    #[test]
    fn classification_is_symmetric_and_exhaustive() {
        let p = StitchParams::default();
        let a = disk_patch(0, 0.0, 0.0, 5.0, 0.5, |_, _| 0.0);
        let b = disk_patch(1, 6.0, 0.3, 5.0, 0.5, |_, _| 0.0);
        let ab = classify_overlap(&a, &b, &p);
        let ba = classify_overlap(&b, &a, &p);
        assert_eq!(ab.a_overlap, ba.b_overlap);
        assert_eq!(ab.b_rest, ba.a_rest);
        assert_eq!(ab.a_overlap.len() + ab.a_rest.len(), a.points.len());
        assert!(!ab.a_overlap.is_empty());
    }

    #[test]
    fn lower_point_wins_and_ties_go_to_earlier_contact() {
        let p = StitchParams::default();
        let mk = |id, z| ContactPatch::new(id, vec![WorldPoint::new(0.0, 0.0, z)], Pose::identity());
        assert_eq!(extract_contiguous(&mk(0, 1.4), &mk(1, 1.0), &p), vec![WorldPoint::new(0.0, 0.0, 1.0)]);
        let tie = merge_pair(&mk(3, 1.0), &mk(2, 1.0), &p);
        assert_eq!(tie.len(), 1);
        let tie = extract_contiguous(
            &ContactPatch::new(5, vec![WorldPoint::new(0.0, 0.0, 1.0)], Pose::from_translation([1.0, 0.0, 0.0])),
            &mk(2, 1.0),
            &p,
        );
        assert_eq!(tie.len(), 1);
    }

    #[test]
    fn merge_identity_and_union() {
        let p = StitchParams::default();
        let a = disk_patch(0, 0.0, 0.0, 3.0, 0.5, |x, _| x);
        assert_eq!(merge_patches(std::slice::from_ref(&a), &p).unwrap().points, a.points);
        let b = disk_patch(1, 50.0, 0.0, 3.0, 0.5, |x, _| x);
        let m = merge_patches(&[a.clone(), b.clone()], &p).unwrap();
        assert_eq!(m.points.len(), a.points.len() + b.points.len());
        assert!(merge_patches(&[], &p).is_err());
    }

    #[test]
    fn merged_points_come_from_inputs() {
        let p = StitchParams::default();
        let a = disk_patch(0, 0.0, 0.0, 4.0, 0.5, |x, y| 0.1 * x + 0.01 * y);
        let b = disk_patch(1, 3.0, 0.0, 4.0, 0.5, |x, y| 0.1 * x + 0.02 * y + 0.05);
        let m = merge_patches(&[a.clone(), b.clone()], &p).unwrap();
        let all = naive_union(&[a, b]);
        assert!(m.points.len() < all.len());
        assert!(m.points.iter().all(|q| all.contains(q)));
    }

    #[test]
    fn rasterize_single_point_and_plane() {
        let g = rasterize(&[WorldPoint::new(0.3, 0.4, 2.5)], 0.25);
        assert_eq!(g.occupied_count(), 1);
        assert_eq!(g.occupied().next().unwrap()[2], 2.5);
        let plane = disk_patch(0, 0.0, 0.0, 3.0, 0.1, |_, _| -1.25);
        let g = rasterize(&plane.points, 0.25);
        assert!(g.values().iter().flatten().all(|z| (z + 1.25).abs() < 1e-9));
    }

    #[test]
    fn rasterized_gaussian_matches_analytic() {
        let f = |x: f64, y: f64| 5.0 * (-(x * x + y * y) / 100.0).exp();
        let pts = disk_patch(0, 0.0, 0.0, 12.0, 0.1, f).points;
        let g = rasterize(&pts, 0.25);
        let sq: Vec<f64> = g.occupied().map(|c| (c[2] - f(c[0], c[1])).powi(2)).collect();
        let rms = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
        assert!(rms <= 0.05, "{rms}");
    }

    #[test]
    fn mollifier_integrates_to_one() {
        // Polar midpoint rule, independent of the Simpson rule used for I.
        let eps = 0.25;
        let n = 200_000;
        let h = eps / n as f64;
        let total: f64 = (0..n)
            .map(|k| {
                let r = (k as f64 + 0.5) * h;
                2.0 * std::f64::consts::PI * r * mollifier(r, eps) * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        assert!((mollifier_normalization() - 0.46651239317).abs() < 1e-9);
    }

    #[test]
    fn constant_field_is_invariant() {
        let p = StitchParams::default();
        let plane = disk_patch(0, 0.0, 0.0, 2.0, 0.125, |_, _| 3.5);
        let g = rasterize(&plane.points, 0.125);
        let m = mollify(&g, &p).unwrap();
        assert!(m.values().iter().flatten().all(|z| (z - 3.5).abs() < 1e-9));
    }

    #[test]
    fn spike_keeps_mass() {
        let p = StitchParams::default();
        let mut g = HeightGrid::aligned([-1.0, -1.0], [1.0, 1.0], 0.125);
        for v in g.values_mut() {
            *v = Some(0.0);
        }
        let (i, j) = g.cell_of(0.0, 0.0).unwrap();
        g.set(i, j, Some(1.0));
        let m = mollify(&g, &p).unwrap();
        assert!(m.get(i, j).unwrap() < 1.0);
        let mass: f64 = m.values().iter().flatten().sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mean_preserved_with_holes() {
        let p = StitchParams::default();
        let f = |x: f64, y: f64| (x * 3.0).sin() + y * y;
        let mut pts = disk_patch(0, 0.0, 0.0, 2.0, 0.125, f).points;
        pts.retain(|q| q.x.hypot(q.y - 0.5) > 0.4);
        let g = rasterize(&pts, 0.125);
        let m = mollify(&g, &p).unwrap();
        assert!((m.mean().unwrap() - g.mean().unwrap()).abs() < 1e-6);
        assert_eq!(m.occupied_count(), g.occupied_count());
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let g = rasterize(&[WorldPoint::new(0.0, 0.0, 1.0)], 0.25);
        assert!(matches!(mollify(&g, &StitchParams::default()), Err(StitchError::KernelUnresolved { .. })));
    }

    #[test]
    fn stitching_is_translation_equivariant() {
        let p = StitchParams::default();
        let a = disk_patch(0, 0.0, 0.0, 3.0, 0.125, |x, y| 0.1 * x * y);
        let b = disk_patch(1, 2.0, 0.0, 3.0, 0.125, |x, y| 0.1 * x * y + 0.02);
        let v = [2.0, -3.0, 0.75];
        let s0 = stitch(&[a.clone(), b.clone()], &p).unwrap();
        let s1 = stitch(&[a.translated(v), b.translated(v)], &p).unwrap();
        let (g0, g1) = (s0.grid.unwrap(), s1.grid.unwrap());
        assert_eq!(g0.occupied_count(), g1.occupied_count());
        for (c0, c1) in g0.occupied().zip(g1.occupied()) {
            assert!((c1[0] - c0[0] - v[0]).abs() < 1e-9);
            assert!((c1[1] - c0[1] - v[1]).abs() < 1e-9);
            assert!((c1[2] - c0[2] - v[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_inverse_roundtrip() {
        let a = 0.3f64;
        let pose = Pose {
            rotation: [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]],
            translation: [1.0, 2.0, 3.0],
        };
        let p = WorldPoint::new(0.5, -1.0, 2.0);
        assert!(pose.inverse().apply(&pose.apply(&p)).distance(&p) < 1e-12);
    }
}

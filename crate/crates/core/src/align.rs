//! Classical reference reconstruction: similarity registration of per-view
//! point maps into the satellite frame, `ρ` estimation and on-tile camera
//! localization.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::frames::{attitude_rotation, Pose, ViewCamera};
use crate::grid::{pixel_center, PointMap, Projection};
use crate::kdtree::KdTree;
use crate::ortho::{camera_on_tile, SatTile};
use crate::{Error, Result};

const MAX_ROUNDS: usize = 50;
const CONVERGED: f64 = 1e-8;

/// Integer pixel `(row, col)` in view `a` matched to continuous `(u, v)` in view `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub view_a: usize,
    pub pixel_a: (usize, usize),
    pub view_b: usize,
    pub pixel_b: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrespondenceSource {
    GroundTruth,
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub source: CorrespondenceSource,
}

impl CorrespondenceSet {
    /// Keeps only matches between the listed views and renumbers them by
    /// their position in `keep`.
    pub fn restrict(&self, keep: &[usize]) -> CorrespondenceSet {
        let pos = |v: usize| keep.iter().position(|k| *k == v);
        let pairs = self
            .pairs
            .iter()
            .filter_map(|c| {
                Some(Correspondence {
                    view_a: pos(c.view_a)?,
                    view_b: pos(c.view_b)?,
                    ..*c
                })
            })
            .collect();
        CorrespondenceSet {
            pairs,
            source: self.source,
        }
    }

    /// Resolves every match to a 3-D point pair in the two views' local frames.
    pub fn resolve(&self, pointmaps: &[PointMap], projections: &[Projection]) -> Result<Vec<(usize, usize, Vector3<f64>, Vector3<f64>)>> {
        let n = pointmaps.len();
        let mut out = Vec::with_capacity(self.pairs.len());
        for c in &self.pairs {
            if c.view_a >= n || c.view_b >= n || c.view_a == c.view_b {
                return Err(Error::Structural(format!(
                    "correspondence between views {} and {} with {n} views",
                    c.view_a, c.view_b
                )));
            }
            let pa = &pointmaps[c.view_a];
            let (row, col) = c.pixel_a;
            if row >= pa.height || col >= pa.width {
                return Err(Error::Structural(format!("pixel {:?} outside view {}", c.pixel_a, c.view_a)));
            }
            let (Some(a), Some(b)) = (
                pa.get(row, col),
                pointmaps[c.view_b].sample(c.pixel_b.0, c.pixel_b.1, projections[c.view_b]),
            ) else {
                continue;
            };
            out.push((c.view_a, c.view_b, a, b));
        }
        Ok(out)
    }
}

/// `x ↦ scale·rotation·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Similarity) -> Similarity {
        Similarity {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    fn max_change(&self, other: &Similarity) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        (self.scale - other.scale).abs().max(dr).max(dt)
    }

    /// World→camera pose of a view whose local frame this similarity maps
    /// into the target frame (scale drops out of orientation and center).
    pub fn camera_pose(&self) -> Pose {
        Pose::from_center(self.rotation.transpose(), self.translation)
    }
}

/// Least-squares similarity (or rigid motion) taking `src` onto `dst`.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(Error::Structural(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 correspondences, got {}", src.len())));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (sc, dc) = (s - mu_s, d - mu_d);
        cov += dc * sc.transpose();
        src_cov += sc * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let sv = src_cov.symmetric_eigenvalues();
    let mut sv = [sv[0], sv[1], sv[2]];
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_s
    } else {
        1.0
    };
    if with_scale && !(scale > 0.0) {
        return Err(Error::Degenerate("target points are coincident".into()));
    }
    Ok(Similarity {
        scale,
        rotation,
        translation: mu_d - rotation * mu_s * scale,
    })
}

/// Registers every view into the reference view's frame.
///
/// Views are first chained along a breadth-first spanning tree of the
/// correspondence graph (neighbors in index order), then refined by
/// re-fitting each view against all of its already-placed neighbors until
/// parameters move by less than 1e-8 or 50 rounds have run.
pub fn register_views(
    pointmaps: &[PointMap],
    projections: &[Projection],
    corr: &CorrespondenceSet,
    reference: usize,
) -> Result<Vec<Similarity>> {
    let n = pointmaps.len();
    if projections.len() != n {
        return Err(Error::Structural("one projection per point map required".into()));
    }
    if reference >= n {
        return Err(Error::Structural(format!("reference view {reference} out of {n}")));
    }
    // edges[(lo, hi)] = (points in lo, points in hi)
    let mut edges: BTreeMap<(usize, usize), (Vec<Vector3<f64>>, Vec<Vector3<f64>>)> = BTreeMap::new();
    for (a, b, pa, pb) in corr.resolve(pointmaps, projections)? {
        let (key, lo, hi) = if a < b { ((a, b), pa, pb) } else { ((b, a), pb, pa) };
        let e = edges.entry(key).or_default();
        e.0.push(lo);
        e.1.push(hi);
    }
    let edge = |from: usize, to: usize| -> Option<(&Vec<Vector3<f64>>, &Vec<Vector3<f64>>)> {
        if from < to {
            edges.get(&(from, to)).map(|e| (&e.0, &e.1))
        } else {
            edges.get(&(to, from)).map(|e| (&e.1, &e.0))
        }
    };

    let mut sims: Vec<Option<Similarity>> = vec![None; n];
    sims[reference] = Some(Similarity::identity());
    let mut queue = VecDeque::from([reference]);
    while let Some(p) = queue.pop_front() {
        let sp = sims[p].expect("queued views are placed");
        for v in 0..n {
            if sims[v].is_some() {
                continue;
            }
            let Some((src, dst)) = edge(v, p) else { continue };
            let dst_ref: Vec<_> = dst.iter().map(|x| sp.apply(x)).collect();
            if let Ok(s) = umeyama(src, &dst_ref, true) {
                sims[v] = Some(s);
                queue.push_back(v);
            }
        }
    }
    let unreachable: Vec<usize> = (0..n).filter(|v| sims[*v].is_none()).collect();
    if !unreachable.is_empty() {
        return Err(Error::Structural(format!(
            "views {unreachable:?} are not connected to reference view {reference}"
        )));
    }
    let mut sims: Vec<Similarity> = sims.into_iter().map(|s| s.expect("all placed")).collect();

    for _ in 0..MAX_ROUNDS {
        let mut change: f64 = 0.0;
        for v in (0..n).filter(|v| *v != reference) {
            let mut src = Vec::new();
            let mut dst = Vec::new();
            for w in (0..n).filter(|w| *w != v) {
                if let Some((sv, sw)) = edge(v, w) {
                    src.extend_from_slice(sv);
                    dst.extend(sw.iter().map(|x| sims[w].apply(x)));
                }
            }
            let updated = umeyama(&src, &dst, true)?;
            change = change.max(updated.max_change(&sims[v]));
            sims[v] = updated;
        }
        if change < CONVERGED {
            break;
        }
    }
    Ok(sims)
}

/// Closed-form least-squares `ρ` from registered satellite-frame `(x, y)` at
/// tile pixels `(u, v)`, with pixels centered at `principal`.
pub fn estimate_rho(samples: &[((f64, f64), (f64, f64))], principal: (f64, f64)) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for &((x, y), (u, v)) in samples {
        let (du, dv) = (u - principal.0, v - principal.1);
        num += x * du + y * dv;
        den += du * du + dv * dv;
    }
    if !(den > 0.0) {
        return Err(Error::Degenerate("all tile points sit on the principal point".into()));
    }
    Ok(num / den)
}

/// World pose given to the reference satellite frame by [`localize`]: a
/// north-up nadir camera at the origin of a y-down world.
pub fn nominal_tile_pose() -> Pose {
    Pose::from_center(attitude_rotation(0.0, 90.0, 0.0), Vector3::zeros())
}

/// On-tile position and heading of one perspective camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraLocation {
    pub view: usize,
    pub u: f64,
    pub v: f64,
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub rho: f64,
    pub similarities: Vec<Similarity>,
    pub cameras: Vec<CameraLocation>,
}

/// Registers all views into satellite view `reference`, estimates `ρ` from
/// matches against that tile and places every perspective camera on it.
pub fn localize(
    cameras: &[ViewCamera],
    pointmaps: &[PointMap],
    corr: &CorrespondenceSet,
    reference: usize,
) -> Result<Localization> {
    let Some(ViewCamera::Ortho { width, height, .. }) = cameras.get(reference).copied() else {
        return Err(Error::Validation(format!("reference view {reference} is not a satellite tile")));
    };
    let projections: Vec<Projection> = cameras.iter().map(|c| c.projection()).collect();
    let sims = register_views(pointmaps, &projections, corr, reference)?;

    let mut samples = Vec::new();
    for c in &corr.pairs {
        let (pixel, point) = if c.view_a == reference {
            let (row, col) = c.pixel_a;
            let p = pointmaps[c.view_b].sample(c.pixel_b.0, c.pixel_b.1, projections[c.view_b]);
            (pixel_center(row, col), p.map(|p| sims[c.view_b].apply(&p)))
        } else if c.view_b == reference {
            let (row, col) = c.pixel_a;
            (c.pixel_b, pointmaps[c.view_a].get(row, col).map(|p| sims[c.view_a].apply(&p)))
        } else {
            continue;
        };
        if let Some(p) = point {
            samples.push(((p.x, p.y), pixel));
        }
    }
    let rho = estimate_rho(&samples, (width as f64 / 2.0, height as f64 / 2.0))?;
    if !(rho > 0.0) {
        return Err(Error::Degenerate(format!("estimated rho {rho} is not positive")));
    }

    let tile_pose = nominal_tile_pose();
    let tile = SatTile::new(width, height, rho, tile_pose)?;
    let mut located = Vec::new();
    for (view, cam) in cameras.iter().enumerate() {
        if matches!(cam, ViewCamera::Ortho { .. }) {
            continue;
        }
        let in_world = sims[view].camera_pose().compose(&tile_pose);
        let (u, v, yaw_deg) = camera_on_tile(&in_world, &tile);
        located.push(CameraLocation { view, u, v, yaw_deg });
    }
    Ok(Localization {
        rho,
        similarities: sims,
        cameras: located,
    })
}

/// Mutual nearest-neighbor matches between two point maps already expressed
/// in a common frame, kept when closer than three voxel cells.
pub fn mutual_nn_correspondences(a: &PointMap, b: &PointMap, view_a: usize, view_b: usize, cell: f64) -> Result<Vec<Correspondence>> {
    if !(cell > 0.0) {
        return Err(Error::Configuration(format!("cell size must be positive, got {cell}")));
    }
    let index = |m: &PointMap| -> Vec<usize> { (0..m.points.len()).filter(|i| m.valid[*i]).collect() };
    let (ia, ib) = (index(a), index(b));
    let ta = KdTree::new(ia.iter().map(|i| a.points[*i]).collect());
    let tb = KdTree::new(ib.iter().map(|i| b.points[*i]).collect());
    let cutoff2 = (3.0 * cell).powi(2);
    let mut out = Vec::new();
    for (ka, &i) in ia.iter().enumerate() {
        let Some((kb, d2)) = tb.nearest(&a.points[i]) else { break };
        if d2 >= cutoff2 {
            continue;
        }
        if ta.nearest(&b.points[ib[kb]]).map(|r| r.0) != Some(ka) {
            continue;
        }
        let j = ib[kb];
        out.push(Correspondence {
            view_a,
            pixel_a: (i / a.width, i % a.width),
            view_b,
            pixel_b: pixel_center(j / b.width, j % b.width),
        });
    }
    Ok(out)
}

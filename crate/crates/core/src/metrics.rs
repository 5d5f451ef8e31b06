//! Evaluation metrics: reconstruction accuracy, relative-pose recall and AUC,
//! on-tile localization errors, PCK and lateral/longitudinal decomposition,
//! plus per-sample evaluation and aggregation.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frames::{relative_pose, Modality, Pose, TriViewSample};
use crate::grid::PointMap;
use crate::kdtree::KdTree;
use crate::losses::{depth_weights, optimal_scale};
use crate::ortho::{camera_on_tile, wrap_degrees, SatTile};
use crate::{Error, Result};

pub const DELTA_THRESHOLDS_M: [f64; 3] = [0.5, 1.0, 2.0];
pub const POSE_THRESHOLDS_DEG: [f64; 3] = [5.0, 15.0, 25.0];
pub const AUC_MAX_DEG: f64 = 30.0;
pub const PCK_THRESHOLDS_M: [f64; 2] = [2.0, 5.0];
pub const KITTI_DISTANCE_THRESHOLDS_M: [f64; 3] = [1.0, 3.0, 5.0];
pub const KITTI_ORIENTATION_THRESHOLDS_DEG: [f64; 2] = [1.0, 3.0];

const DIRECTION_EPS: f64 = 1e-9;
const ZERO_ERROR: f64 = 1e-12;
const AUC_STEPS_PER_DEG: usize = 10;

/// Nearest-neighbor distance from every predicted point to the ground truth.
pub fn nn_distances(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<f64>> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Degenerate("nearest-neighbor distances need non-empty point sets".into()));
    }
    let tree = KdTree::new(gt.to_vec());
    Ok(pred
        .par_iter()
        .map(|p| tree.nearest(p).expect("non-empty tree").1.sqrt())
        .collect())
}

/// Mean distance from predicted points to their nearest ground-truth point.
pub fn acc_mean(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let d = nn_distances(pred, gt)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Fraction of predicted points whose nearest ground-truth point is closer than `tau`.
pub fn delta_ratio(pred: &[Vector3<f64>], gt: &[Vector3<f64>], tau: f64) -> Result<f64> {
    let d = nn_distances(pred, gt)?;
    Ok(fraction_below(&d, tau))
}

fn fraction_below(values: &[f64], tau: f64) -> f64 {
    values.iter().filter(|d| **d < tau).count() as f64 / values.len() as f64
}

/// Rotation angle of `a·bᵀ` in degrees, computed from both its symmetric and
/// skew parts so identical rotations give exactly 0.
pub fn rotation_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a * b.transpose();
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    (skew.norm() / 2.0).atan2((m.trace() - 1.0) / 2.0).to_degrees()
}

/// Angle between two directions in degrees; 0 if both vanish, 180 if one does.
pub fn direction_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (za, zb) = (a.norm() < DIRECTION_EPS, b.norm() < DIRECTION_EPS);
    match (za, zb) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 180.0,
        _ => a.cross(b).norm().atan2(a.dot(b)).to_degrees(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEval {
    pub rot_err: f64,
    pub trans_dir_err: f64,
}

/// Relative rotation and translation-direction errors over all ordered view pairs.
pub fn pose_errors(pred: &[Pose], gt: &[Pose]) -> Result<Vec<PoseEval>> {
    if pred.len() != gt.len() || pred.len() < 2 {
        return Err(Error::Structural(format!(
            "pose errors need two aligned lists of at least 2 poses, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len();
    let mut out = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in (0..n).filter(|j| *j != i) {
            let rp = relative_pose(&pred[i], &pred[j]);
            let rg = relative_pose(&gt[i], &gt[j]);
            out.push(PoseEval {
                rot_err: rotation_angle_deg(&rp.rotation, &rg.rotation),
                trans_dir_err: direction_angle_deg(&rp.translation, &rg.translation),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecall {
    /// `(θ, fraction)` pairs.
    pub rra: Vec<(f64, f64)>,
    pub rta: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Cumulative pose accuracy at `t`: fraction of pairs with the worse of the
/// two errors below `t` (below 1e-12 at `t = 0`).
pub fn pose_accuracy(evals: &[PoseEval], t: f64) -> f64 {
    let t = if t <= 0.0 { ZERO_ERROR } else { t };
    evals.iter().filter(|e| e.rot_err.max(e.trans_dir_err) < t).count() as f64 / evals.len() as f64
}

/// RRA/RTA at each threshold and the normalized area under the accuracy
/// curve on `[0, auc_max]` (trapezoid rule, 0.1° steps).
pub fn recall_and_auc(evals: &[PoseEval], thetas: &[f64], auc_max: f64) -> Result<PoseRecall> {
    if evals.is_empty() {
        return Err(Error::Structural("recall needs at least one pose pair".into()));
    }
    if !(auc_max > 0.0) {
        return Err(Error::Configuration(format!("AUC range must be positive, got {auc_max}")));
    }
    let n = evals.len() as f64;
    let rec = |f: fn(&PoseEval) -> f64| -> Vec<(f64, f64)> {
        thetas
            .iter()
            .map(|&t| (t, evals.iter().filter(|e| f(e) < t).count() as f64 / n))
            .collect()
    };
    let steps = (auc_max * AUC_STEPS_PER_DEG as f64).round() as usize;
    let acc: Vec<f64> = (0..=steps)
        .map(|k| pose_accuracy(evals, k as f64 / AUC_STEPS_PER_DEG as f64))
        .collect();
    let area: f64 = acc.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum::<f64>() / AUC_STEPS_PER_DEG as f64;
    Ok(PoseRecall {
        rra: rec(|e| e.rot_err),
        rta: rec(|e| e.trans_dir_err),
        auc: area / (steps as f64 / AUC_STEPS_PER_DEG as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocEval {
    pub meter_err: f64,
    pub yaw_err: f64,
}

/// Absolute difference of two headings folded into `[0, 180]`.
pub fn yaw_difference(a: f64, b: f64) -> f64 {
    wrap_degrees(a - b).abs()
}

/// Metric on-tile position error and wrapped yaw error of one camera.
pub fn localization_eval(pred: (f64, f64, f64), gt: (f64, f64, f64), m_per_px: f64) -> Result<LocEval> {
    if !(m_per_px > 0.0) {
        return Err(Error::Configuration(format!("meters per pixel must be positive, got {m_per_px}")));
    }
    Ok(LocEval {
        meter_err: m_per_px * (pred.0 - gt.0).hypot(pred.1 - gt.1),
        yaw_err: yaw_difference(pred.2, gt.2),
    })
}

/// Fraction of on-tile localizations within `tau` meters (inclusive).
pub fn pck(pred: &[(f64, f64)], gt: &[(f64, f64)], tau: f64, m_per_px: f64) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Structural(format!(
            "PCK needs aligned non-empty lists, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| m_per_px * (p.0 - g.0).hypot(p.1 - g.1) <= tau)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiFlags {
    pub lateral: Vec<bool>,
    pub longitudinal: Vec<bool>,
    pub orientation: Vec<bool>,
}

/// Splits a position error into components along and across the
/// ground-truth heading and flags each against the thresholds.
pub fn kitti_decomposition(
    pred_pos: &Vector2<f64>,
    gt_pos: &Vector2<f64>,
    gt_heading: &Vector2<f64>,
    pred_yaw: f64,
    gt_yaw: f64,
    distance_thresholds: &[f64],
    orientation_thresholds: &[f64],
) -> Result<KittiFlags> {
    let norm = gt_heading.norm();
    if !(norm > 1e-12) {
        return Err(Error::Degenerate("ground-truth heading has zero length".into()));
    }
    let h = gt_heading / norm;
    let perp = Vector2::new(-h.y, h.x);
    let d = pred_pos - gt_pos;
    let (lon, lat) = (d.dot(&h).abs(), d.dot(&perp).abs());
    let yaw = yaw_difference(pred_yaw, gt_yaw);
    Ok(KittiFlags {
        lateral: distance_thresholds.iter().map(|t| lat < *t).collect(),
        longitudinal: distance_thresholds.iter().map(|t| lon < *t).collect(),
        orientation: orientation_thresholds.iter().map(|t| yaw < *t).collect(),
    })
}

/// Expresses every view of a prediction and of its ground truth in the
/// respective first view's frame, keeps pixels valid in both, and applies the
/// optimal global scale to the prediction. Returns per-view point lists.
pub fn evaluation_alignment(
    pred_poses: &[Pose],
    pred_maps: &[PointMap],
    gt_poses: &[Pose],
    gt_maps: &[PointMap],
) -> Result<(Vec<Vec<Vector3<f64>>>, Vec<Vec<Vector3<f64>>>)> {
    let n = pred_poses.len();
    if n == 0 || pred_maps.len() != n || gt_poses.len() != n || gt_maps.len() != n {
        return Err(Error::Structural("prediction and ground truth must list the same views".into()));
    }
    let mut pred_views = Vec::with_capacity(n);
    let mut gt_views = Vec::with_capacity(n);
    for v in 0..n {
        if !pred_maps[v].same_shape(&gt_maps[v]) {
            return Err(Error::Structural(format!("view {v}: point map shapes differ")));
        }
        let (mut p, mut g) = (Vec::new(), Vec::new());
        for i in 0..gt_maps[v].points.len() {
            if pred_maps[v].valid[i] && gt_maps[v].valid[i] {
                let pw = pred_poses[v].inverse_transform(&pred_maps[v].points[i]);
                let gw = gt_poses[v].inverse_transform(&gt_maps[v].points[i]);
                p.push(pred_poses[0].transform(&pw));
                g.push(gt_poses[0].transform(&gw));
            }
        }
        pred_views.push(p);
        gt_views.push(g);
    }
    let flat = |vs: &[Vec<Vector3<f64>>]| -> Result<PointMap> {
        let pts: Vec<_> = vs.iter().flatten().copied().collect();
        let len = pts.len();
        PointMap::new(1, len, pts, vec![true; len])
    };
    let (pf, gf) = (flat(&pred_views)?, flat(&gt_views)?);
    let s = optimal_scale(&pf, &gf, &depth_weights(&gf))?;
    for view in &mut pred_views {
        view.iter_mut().for_each(|p| *p *= s);
    }
    Ok((pred_views, gt_views))
}

/// Everything measured on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub acc_mean: f64,
    /// `(τ, fraction)` pairs.
    pub delta: Vec<(f64, f64)>,
    pub pose_evals: Vec<PoseEval>,
    pub ground: Vec<LocEval>,
    pub uav: Vec<LocEval>,
    pub kitti: Vec<KittiFlags>,
}

/// Evaluates a prediction against ground truth. Localization uses the first
/// satellite view of each side as the tile and the ground-truth meters per
/// pixel. With `per_view_acc` the accuracy terms are averaged over views
/// instead of measured on the merged cloud.
pub fn evaluate_sample(
    pred: &TriViewSample,
    pred_maps: &[PointMap],
    gt: &TriViewSample,
    gt_maps: &[PointMap],
    per_view_acc: bool,
) -> Result<SampleReport> {
    if pred.views.len() != gt.views.len() {
        return Err(Error::Structural("prediction and ground truth differ in view count".into()));
    }
    for (p, g) in pred.views.iter().zip(&gt.views) {
        if p.modality != g.modality {
            return Err(Error::Structural("prediction and ground truth differ in view modalities".into()));
        }
    }
    let pred_poses: Vec<Pose> = pred.views.iter().map(|v| v.pose).collect();
    let gt_poses: Vec<Pose> = gt.views.iter().map(|v| v.pose).collect();
    let (pv, gv) = evaluation_alignment(&pred_poses, pred_maps, &gt_poses, gt_maps)?;

    let (acc_mean, delta) = if per_view_acc {
        let mut acc = 0.0;
        let mut delta = vec![0.0; DELTA_THRESHOLDS_M.len()];
        let mut used = 0usize;
        for (p, g) in pv.iter().zip(&gv) {
            if p.is_empty() {
                continue;
            }
            let d = nn_distances(p, g)?;
            acc += d.iter().sum::<f64>() / d.len() as f64;
            for (k, tau) in DELTA_THRESHOLDS_M.iter().enumerate() {
                delta[k] += fraction_below(&d, *tau);
            }
            used += 1;
        }
        let used = used.max(1) as f64;
        (acc / used, DELTA_THRESHOLDS_M.iter().zip(delta).map(|(t, d)| (*t, d / used)).collect())
    } else {
        let p: Vec<_> = pv.into_iter().flatten().collect();
        let g: Vec<_> = gv.into_iter().flatten().collect();
        let d = nn_distances(&p, &g)?;
        (
            d.iter().sum::<f64>() / d.len() as f64,
            DELTA_THRESHOLDS_M.iter().map(|t| (*t, fraction_below(&d, *t))).collect(),
        )
    };

    let pose_evals = pose_errors(&pred_poses, &gt_poses)?;

    let sat = gt.indices(Modality::Satellite);
    let Some(&s0) = sat.first() else {
        return Err(Error::Structural("sample has no satellite view".into()));
    };
    let gt_tile = SatTile::from_view(&gt.views[s0])?;
    let pred_tile = SatTile::from_view(&pred.views[s0])?;
    let mpp = gt.meters_per_pixel_gt;
    let (mut ground, mut uav, mut kitti) = (Vec::new(), Vec::new(), Vec::new());
    for (v, view) in gt.views.iter().enumerate() {
        if view.modality == Modality::Satellite {
            continue;
        }
        let p = camera_on_tile(&pred.views[v].pose, &pred_tile);
        let g = camera_on_tile(&view.pose, &gt_tile);
        let eval = localization_eval(p, g, mpp)?;
        if view.modality == Modality::Ground {
            ground.push(eval);
            let yaw = g.2.to_radians();
            kitti.push(kitti_decomposition(
                &(Vector2::new(p.0, p.1) * mpp),
                &(Vector2::new(g.0, g.1) * mpp),
                &Vector2::new(yaw.sin(), -yaw.cos()),
                p.2,
                g.2,
                &KITTI_DISTANCE_THRESHOLDS_M,
                &KITTI_ORIENTATION_THRESHOLDS_DEG,
            )?);
        } else {
            uav.push(eval);
        }
    }
    Ok(SampleReport {
        acc_mean,
        delta,
        pose_evals,
        ground,
        uav,
        kitti,
    })
}

/// Mean and median (average of the two middle values for even counts).
pub fn mean_median(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    Some((v.iter().sum::<f64>() / n as f64, median))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocSummary {
    pub count: usize,
    pub meter_mean: f64,
    pub meter_median: f64,
    pub yaw_mean: f64,
    pub yaw_median: f64,
    pub pck: Vec<(f64, f64)>,
}

impl LocSummary {
    fn from_evals(evals: &[LocEval]) -> Self {
        let m: Vec<f64> = evals.iter().map(|e| e.meter_err).collect();
        let y: Vec<f64> = evals.iter().map(|e| e.yaw_err).collect();
        let (meter_mean, meter_median) = mean_median(&m).unwrap_or((f64::NAN, f64::NAN));
        let (yaw_mean, yaw_median) = mean_median(&y).unwrap_or((f64::NAN, f64::NAN));
        let pck = PCK_THRESHOLDS_M
            .iter()
            .map(|t| {
                let frac = if m.is_empty() { f64::NAN } else { m.iter().filter(|e| **e <= *t).count() as f64 / m.len() as f64 };
                (*t, frac)
            })
            .collect();
        Self {
            count: evals.len(),
            meter_mean,
            meter_median,
            yaw_mean,
            yaw_median,
            pck,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub acc_mean: f64,
    pub delta: Vec<(f64, f64)>,
    pub rra: Vec<(f64, f64)>,
    pub rta: Vec<(f64, f64)>,
    pub auc30: f64,
    pub ground: LocSummary,
    pub uav: LocSummary,
    pub lateral: Vec<(f64, f64)>,
    pub longitudinal: Vec<(f64, f64)>,
    pub orientation: Vec<(f64, f64)>,
}

fn label(v: f64) -> String {
    format!("{v}")
}

impl MetricsReport {
    /// Flat `(column, value)` list in a fixed order.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = vec![("acc_mean".to_string(), self.acc_mean)];
        out.extend(self.delta.iter().map(|(t, v)| (format!("delta_{}m", label(*t)), *v)));
        out.extend(self.rra.iter().map(|(t, v)| (format!("rra_{}", label(*t)), *v)));
        out.extend(self.rta.iter().map(|(t, v)| (format!("rta_{}", label(*t)), *v)));
        out.push(("auc_30".into(), self.auc30));
        for (name, s) in [("ground", &self.ground), ("uav", &self.uav)] {
            out.push((format!("{name}_meter_mean"), s.meter_mean));
            out.push((format!("{name}_meter_median"), s.meter_median));
            out.push((format!("{name}_yaw_mean"), s.yaw_mean));
            out.push((format!("{name}_yaw_median"), s.yaw_median));
            out.extend(s.pck.iter().map(|(t, v)| (format!("{name}_pck_{}m", label(*t)), *v)));
        }
        out.extend(self.lateral.iter().map(|(t, v)| (format!("lat_{}m", label(*t)), *v)));
        out.extend(self.longitudinal.iter().map(|(t, v)| (format!("lon_{}m", label(*t)), *v)));
        out.extend(self.orientation.iter().map(|(t, v)| (format!("ori_{}deg", label(*t)), *v)));
        out
    }
}

/// Combines per-sample reports in sample order. Reconstruction terms are
/// averaged over samples; pose pairs, camera errors and recall flags are
/// pooled across samples.
pub fn aggregate(reports: &[SampleReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Structural("nothing to aggregate".into()));
    }
    let n = reports.len() as f64;
    let acc_mean = reports.iter().map(|r| r.acc_mean).sum::<f64>() / n;
    let delta = DELTA_THRESHOLDS_M
        .iter()
        .enumerate()
        .map(|(k, t)| (*t, reports.iter().map(|r| r.delta.get(k).map_or(0.0, |d| d.1)).sum::<f64>() / n))
        .collect();
    let evals: Vec<PoseEval> = reports.iter().flat_map(|r| r.pose_evals.iter().copied()).collect();
    let recall = recall_and_auc(&evals, &POSE_THRESHOLDS_DEG, AUC_MAX_DEG)?;
    let ground: Vec<LocEval> = reports.iter().flat_map(|r| r.ground.iter().copied()).collect();
    let uav: Vec<LocEval> = reports.iter().flat_map(|r| r.uav.iter().copied()).collect();
    let flags: Vec<&KittiFlags> = reports.iter().flat_map(|r| r.kitti.iter()).collect();
    let rate = |pick: fn(&KittiFlags) -> &Vec<bool>, thresholds: &[f64]| -> Vec<(f64, f64)> {
        thresholds
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let hits = flags.iter().filter(|f| pick(f)[k]).count();
                (*t, if flags.is_empty() { f64::NAN } else { hits as f64 / flags.len() as f64 })
            })
            .collect()
    };
    Ok(MetricsReport {
        samples: reports.len(),
        acc_mean,
        delta,
        rra: recall.rra,
        rta: recall.rta,
        auc30: recall.auc,
        ground: LocSummary::from_evals(&ground),
        uav: LocSummary::from_evals(&uav),
        lateral: rate(|f| &f.lateral, &KITTI_DISTANCE_THRESHOLDS_M),
        longitudinal: rate(|f| &f.longitudinal, &KITTI_DISTANCE_THRESHOLDS_M),
        orientation: rate(|f| &f.orientation, &KITTI_ORIENTATION_THRESHOLDS_DEG),
    })
}

//! Training objectives on point maps and camera poses, with the closed-form
//! optimal scale and analytic gradients.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::frames::{relative_pose, Pose};
use crate::grid::PointMap;
use crate::{Error, Result};

/// Weights of the normal, confidence and camera terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_n: f64,
    pub lambda_c: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_n: 1.0,
            lambda_c: 0.05,
            lambda_p: 0.1,
        }
    }
}

pub const DEFAULT_CONF_EPS: f64 = 0.1;
pub const DEFAULT_HUBER_DELTA: f64 = 0.1;
pub const CONF_CLAMP: f64 = 1e-7;
const MIN_DEPTH_WEIGHT: f64 = 0.1;
const MIN_SCALE: f64 = 1e-6;
const NORMAL_EPS: f64 = 1e-12;

/// Per-pixel confidence in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfMap {
    pub height: usize,
    pub width: usize,
    pub conf: Vec<f64>,
}

impl ConfMap {
    /// Clamps every entry into `[1e-7, 1 − 1e-7]`.
    pub fn new(height: usize, width: usize, conf: Vec<f64>) -> Result<Self> {
        if conf.len() != height * width {
            return Err(Error::Structural(format!(
                "confidence map {height}x{width} needs {} entries, got {}",
                height * width,
                conf.len()
            )));
        }
        if conf.iter().any(|c| c.is_nan()) {
            return Err(Error::Validation("confidence contains NaN".into()));
        }
        let conf = conf.into_iter().map(|c| c.clamp(CONF_CLAMP, 1.0 - CONF_CLAMP)).collect();
        Ok(Self { height, width, conf })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }
}

fn check_pair(pred: &PointMap, gt: &PointMap) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::Structural(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    Ok(())
}

fn joint<'a>(pred: &'a PointMap, gt: &'a PointMap) -> impl Iterator<Item = usize> + 'a {
    (0..pred.points.len()).filter(move |i| pred.valid[*i] && gt.valid[*i])
}

/// Depth weights `1 / max(z_gt, 0.1)` per pixel (0 where invalid).
pub fn depth_weights(gt: &PointMap) -> Vec<f64> {
    gt.points
        .iter()
        .zip(&gt.valid)
        .map(|(p, ok)| if *ok { 1.0 / p.z.max(MIN_DEPTH_WEIGHT) } else { 0.0 })
        .collect()
}

/// Global scale minimizing `Σ wᵢ |s·p̂ᵢ − pᵢ|` over all coordinates of
/// jointly valid pixels: the weighted median of the ratios `pᵢ/p̂ᵢ` with
/// weights `wᵢ·|p̂ᵢ|`. Coordinates with `|p̂ᵢ| ≤ 1e-9` are skipped and the
/// result is clamped to at least 1e-6.
pub fn optimal_scale(pred: &PointMap, gt: &PointMap, w: &[f64]) -> Result<f64> {
    scale_with_pivot(pred, gt, w).map(|(s, _)| s)
}

/// Optimal scale and, unless clamped, the `(pixel, axis)` whose ratio it equals.
fn scale_with_pivot(pred: &PointMap, gt: &PointMap, w: &[f64]) -> Result<(f64, Option<(usize, usize)>)> {
    check_pair(pred, gt)?;
    if w.len() != pred.points.len() {
        return Err(Error::Structural("one weight per pixel required".into()));
    }
    let mut items: Vec<(f64, f64, usize, usize)> = Vec::new();
    for i in joint(pred, gt) {
        for k in 0..3 {
            let ph = pred.points[i][k];
            let weight = w[i] * ph.abs();
            if ph.abs() > 1e-9 && weight > 0.0 {
                items.push((gt.points[i][k] / ph, weight, i, k));
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Degenerate("no usable coordinates for the scale fit".into()));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    let mut pick = items.len() - 1;
    for (n, item) in items.iter().enumerate() {
        acc += item.1;
        if acc >= total / 2.0 {
            pick = n;
            break;
        }
    }
    let (ratio, _, i, k) = items[pick];
    Ok(if ratio < MIN_SCALE { (MIN_SCALE, None) } else { (ratio, Some((i, k))) })
}

/// Lowest value at which the cumulative weight reaches half the total.
pub fn weighted_median(items: &mut [(f64, f64)]) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    for (r, wt) in items.iter() {
        acc += wt;
        if acc >= total / 2.0 {
            return Some(*r);
        }
    }
    items.last().map(|x| x.0)
}

/// Depth-weighted L1 residual at the optimal scale, with its gradient with
/// respect to the predicted points. The scale equals the ratio of one pivot
/// coordinate, so that coordinate also carries the derivative of the scale.
pub fn loss_geo(pred: &PointMap, gt: &PointMap) -> Result<(f64, Vec<Vector3<f64>>)> {
    let w = depth_weights(gt);
    let (s, pivot) = scale_with_pivot(pred, gt, &w)?;
    let mut grad = vec![Vector3::zeros(); pred.points.len()];
    let mut total = 0.0;
    let mut wsum = 0.0;
    // d(total)/ds
    let mut d_s = 0.0;
    for i in joint(pred, gt) {
        let r = pred.points[i] * s - gt.points[i];
        let mut sign = r.map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
        if let Some((_, k)) = pivot.filter(|p| p.0 == i) {
            // zero up to rounding
            sign[k] = 0.0;
        }
        total += w[i] * r.abs().sum();
        wsum += w[i];
        grad[i] = sign * (w[i] * s);
        d_s += w[i] * sign.dot(&pred.points[i]);
    }
    if let Some((i, k)) = pivot {
        // s = g/p̂ at the pivot, so ds/dp̂ = −s/p̂ there
        grad[i][k] += d_s * (-s / pred.points[i][k]);
    }
    for g in &mut grad {
        *g /= wsum;
    }
    Ok((total / wsum, grad))
}

/// Unit surface normals from forward differences; the last row and column,
/// pixels with an invalid neighbor and degenerate cross products are invalid.
pub fn normals_from_pointmap(p: &PointMap) -> PointMap {
    let (h, w) = (p.height, p.width);
    let mut out = PointMap::invalid(h, w);
    for row in 0..h.saturating_sub(1) {
        for col in 0..w.saturating_sub(1) {
            let (Some(c), Some(r), Some(d)) = (p.get(row, col), p.get(row, col + 1), p.get(row + 1, col)) else {
                continue;
            };
            let n = (r - c).cross(&(d - c));
            let norm = n.norm();
            if norm >= NORMAL_EPS && norm.is_finite() {
                let i = out.index(row, col);
                out.points[i] = n / norm;
                out.valid[i] = true;
            }
        }
    }
    out
}

/// Mean of `1 − cos` between predicted and ground-truth normals.
pub fn loss_norm(pred: &PointMap, gt: &PointMap) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.height < 2 || pred.width < 2 {
        return Err(Error::Structural("normals need at least 2x2 pixels".into()));
    }
    let (np, ng) = (normals_from_pointmap(pred), normals_from_pointmap(gt));
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in joint(&np, &ng) {
        // equals 1 − cos for unit vectors, without cancellation near 0
        sum += 0.5 * (np.points[i] - ng.points[i]).norm_squared();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate("no pixel has a valid normal in both maps".into()));
    }
    Ok(sum / count as f64)
}

/// Binary cross-entropy of the confidence against "scaled error below `eps`".
pub fn loss_conf(conf: &ConfMap, pred: &PointMap, gt: &PointMap, eps: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if conf.height != pred.height || conf.width != pred.width {
        return Err(Error::Structural("confidence map does not match the point maps".into()));
    }
    let s = optimal_scale(pred, gt, &depth_weights(gt))?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in joint(pred, gt) {
        let c = conf.conf[i].clamp(CONF_CLAMP, 1.0 - CONF_CLAMP);
        let hit = (pred.points[i] * s - gt.points[i]).norm() < eps;
        sum -= if hit { c.ln() } else { (1.0 - c).ln() };
        count += 1;
    }
    Ok(sum / count as f64)
}

/// Geodesic angle between two rotations, radians: `arccos((tr(a·bᵀ) − 1)/2)`,
/// evaluated through `atan2` with the skew part so it stays accurate near 0.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a * b.transpose();
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    (skew.norm() / 2.0).atan2((m.trace() - 1.0) / 2.0)
}

pub fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        r * r / 2.0
    } else {
        delta * (r - delta / 2.0)
    }
}

/// Camera loss over all ordered view pairs: geodesic rotation error plus a
/// Huber penalty on relative translations after one global least-squares
/// scale `ŝ ≥ 0`. The gradient is the full derivative of the translation
/// term with respect to each predicted pose translation, including the
/// dependence of `ŝ` on the predictions.
pub fn loss_cam(pred: &[Pose], gt: &[Pose], huber_delta: f64) -> Result<(f64, Vec<Vector3<f64>>)> {
    if pred.len() != gt.len() || pred.len() < 2 {
        return Err(Error::Structural(format!(
            "camera loss needs two aligned lists of at least 2 poses, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    if !(huber_delta > 0.0) {
        return Err(Error::Configuration(format!("Huber delta must be positive, got {huber_delta}")));
    }
    let n = pred.len();
    let mut pairs = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in (0..n).filter(|j| *j != i) {
            let rp = relative_pose(&pred[i], &pred[j]);
            let rg = relative_pose(&gt[i], &gt[j]);
            pairs.push((i, j, rp, rg));
        }
    }
    let a: f64 = pairs.iter().map(|(_, _, p, g)| p.translation.dot(&g.translation)).sum();
    let b: f64 = pairs.iter().map(|(_, _, p, _)| p.translation.norm_squared()).sum();
    let (s, scale_active) = if b > 1e-18 {
        let s = a / b;
        if s > 0.0 {
            (s, true)
        } else {
            (0.0, false)
        }
    } else {
        (1.0, false)
    };

    let count = pairs.len() as f64;
    let mut total = 0.0;
    let mut g_e = Vec::with_capacity(pairs.len());
    for (_, _, p, g) in &pairs {
        let e = p.translation * s - g.translation;
        let r = e.norm();
        total += geodesic_angle(&p.rotation, &g.rotation) + huber(r, huber_delta);
        let ge = if r <= huber_delta { e } else { e * (huber_delta / r) };
        g_e.push(ge / count);
    }

    let g_s: f64 = pairs.iter().zip(&g_e).map(|((_, _, p, _), ge)| ge.dot(&p.translation)).sum();
    let mut grad = vec![Vector3::zeros(); n];
    for ((i, j, p, g), ge) in pairs.iter().zip(&g_e) {
        let mut d = ge * s;
        if scale_active {
            d += (g.translation - p.translation * (2.0 * s)) * (g_s / b);
        }
        grad[*j] += d;
        grad[*i] -= pred[*i].rotation * pred[*j].rotation.transpose() * d;
    }
    Ok((total / count, grad))
}

/// Values of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub geo: f64,
    pub norm: f64,
    pub conf: f64,
    pub cam: f64,
}

/// Weighted sum of the terms; the normal term is gated off during warm-up.
pub fn total_loss(c: &LossComponents, weights: &LossWeights, warmup_active: bool) -> f64 {
    let norm = if warmup_active { 0.0 } else { weights.lambda_n * c.norm };
    c.geo + norm + weights.lambda_c * c.conf + weights.lambda_p * c.cam
}

//! Metric anchoring of relative depth: global scale/shift fit against a
//! coarse metric anchor, gated by Pearson correlation.

use serde::{Deserialize, Serialize};

use crate::grid::DepthGrid;
use crate::{Error, Result};

pub const DEFAULT_PCC_MIN: f64 = 0.9;

fn joint_values(rel: &DepthGrid, anchor: &DepthGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    if !rel.same_shape(anchor) {
        return Err(Error::Structural(format!(
            "relative depth {}x{} vs anchor {}x{}",
            rel.height, rel.width, anchor.height, anchor.width
        )));
    }
    let idx = (0..rel.values.len()).filter(|i| rel.valid[*i] && anchor.valid[*i]);
    Ok(idx.map(|i| (rel.values[i], anchor.values[i])).unzip())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares `(s, t)` with `s·rel + t ≈ anchor` over jointly valid pixels.
pub fn fit_scale_shift(rel: &DepthGrid, anchor: &DepthGrid) -> Result<(f64, f64)> {
    let (r, a) = joint_values(rel, anchor)?;
    fit_affine(&r, &a)
}

/// Least-squares `(s, t)` with `s·x + t ≈ y`.
pub fn fit_affine(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::Degenerate(format!("affine fit needs at least 2 samples, got {}", x.len())));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
    }
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("relative depth is constant over the fit region".into()));
    }
    let s = sxy / sxx;
    Ok((s, my - s * mx))
}

/// Sample Pearson correlation of `a` and `b` over `mask`.
pub fn pearson(a: &[f64], b: &[f64], mask: &[bool]) -> Result<f64> {
    if a.len() != b.len() || a.len() != mask.len() {
        return Err(Error::Structural("pearson inputs differ in length".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = (0..a.len()).filter(|i| mask[*i]).map(|i| (a[i], b[i])).unzip();
    pearson_values(&x, &y)
}

fn pearson_values(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::Degenerate(format!("correlation needs at least 2 samples, got {}", x.len())));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Degenerate("correlation of a constant signal".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FusionOutcome {
    Accepted { fused: DepthGrid, s: f64, t: f64, pcc: f64 },
    Rejected { s: f64, t: f64, pcc: f64 },
}

impl FusionOutcome {
    pub fn pcc(&self) -> f64 {
        match self {
            FusionOutcome::Accepted { pcc, .. } | FusionOutcome::Rejected { pcc, .. } => *pcc,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, FusionOutcome::Accepted { .. })
    }
}

/// Fits `(s, t)`, measures the anchor/relative correlation on the joint mask
/// and, when it reaches `pcc_min`, returns `s·rel + t` on the relative map's
/// valid pixels.
pub fn fuse_and_filter(rel: &DepthGrid, anchor: &DepthGrid, pcc_min: f64) -> Result<FusionOutcome> {
    let (r, a) = joint_values(rel, anchor)?;
    let (s, t) = fit_affine(&r, &a)?;
    let pcc = pearson_values(&a, &r)?;
    if pcc < pcc_min {
        return Ok(FusionOutcome::Rejected { s, t, pcc });
    }
    let mut fused = DepthGrid::invalid(rel.height, rel.width);
    for i in 0..rel.values.len() {
        if rel.valid[i] {
            let v = s * rel.values[i] + t;
            fused.values[i] = v;
            fused.valid[i] = v.is_finite() && v > 0.0;
        }
    }
    Ok(FusionOutcome::Accepted { fused, s, t, pcc })
}

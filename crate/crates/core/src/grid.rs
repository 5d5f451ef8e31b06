//! Dense per-pixel containers shared by every module.
//!
//! Pixel `(row, col)` has its center at image coordinates
//! `(u, v) = (col + 0.5, row + 0.5)`. Storage is row-major.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::frames::Intrinsics;
use crate::{Error, Result};

/// Image coordinate of the center of pixel `(row, col)`.
#[inline]
pub fn pixel_center(row: usize, col: usize) -> (f64, f64) {
    (col as f64 + 0.5, row as f64 + 0.5)
}

/// H×W depth (or relative depth) values with a validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthGrid {
    pub fn invalid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
            valid: vec![false; height * width],
        }
    }

    /// Builds a grid from raw values; a value is valid iff it is finite and positive.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Structural(format!(
                "expected {} depth values for {height}x{width}, got {}",
                height * width,
                values.len()
            )));
        }
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Ok(Self {
            height,
            width,
            values,
            valid,
        })
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = self.index(row, col);
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.index(row, col);
        self.values[i] = value;
        self.valid[i] = true;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_shape(&self, other: &DepthGrid) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// How a view maps pixels to rays, needed for exact sub-pixel point lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Projection {
    Perspective,
    Orthographic,
}

/// Per-pixel 3D points in a view's local frame plus a validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMap {
    pub height: usize,
    pub width: usize,
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl PointMap {
    pub fn new(height: usize, width: usize, points: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self> {
        if points.len() != height * width || valid.len() != height * width {
            return Err(Error::Structural(format!(
                "point map {height}x{width} needs {} entries, got {} points / {} mask",
                height * width,
                points.len(),
                valid.len()
            )));
        }
        Ok(Self {
            height,
            width,
            points,
            valid,
        })
    }

    pub fn invalid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            points: vec![Vector3::zeros(); height * width],
            valid: vec![false; height * width],
        }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<Vector3<f64>> {
        let i = self.index(row, col);
        self.valid[i].then(|| self.points[i])
    }

    pub fn same_shape(&self, other: &PointMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Valid points in row-major order.
    pub fn valid_points(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.points
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(p, _)| *p)
    }

    /// Lifts a pinhole depth map (camera-frame z) to camera-frame points.
    pub fn from_pinhole_depth(depth: &DepthGrid, intr: &Intrinsics) -> Result<Self> {
        if depth.width != intr.width || depth.height != intr.height {
            return Err(Error::Structural(format!(
                "depth {}x{} does not match intrinsics {}x{}",
                depth.height, depth.width, intr.height, intr.width
            )));
        }
        let mut pm = PointMap::invalid(depth.height, depth.width);
        for row in 0..depth.height {
            for col in 0..depth.width {
                if let Some(z) = depth.get(row, col) {
                    let (u, v) = pixel_center(row, col);
                    let i = pm.index(row, col);
                    pm.points[i] = intr.unproject(u, v, z);
                    pm.valid[i] = true;
                }
            }
        }
        Ok(pm)
    }

    /// Lifts an orthographic depth map: `(x, y) = ((u − W/2)·ρ, (v − H/2)·ρ)`, third coordinate = depth.
    pub fn from_ortho_depth(depth: &DepthGrid, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Configuration(format!("rho must be positive, got {rho}")));
        }
        let (cu, cv) = (depth.width as f64 / 2.0, depth.height as f64 / 2.0);
        let mut pm = PointMap::invalid(depth.height, depth.width);
        for row in 0..depth.height {
            for col in 0..depth.width {
                if let Some(z) = depth.get(row, col) {
                    let (u, v) = pixel_center(row, col);
                    let i = pm.index(row, col);
                    pm.points[i] = Vector3::new((u - cu) * rho, (v - cv) * rho, z);
                    pm.valid[i] = true;
                }
            }
        }
        Ok(pm)
    }

    /// Looks up the surface point at a continuous pixel location.
    ///
    /// Interpolates bilinearly over the surrounding pixel centers in a space
    /// where planar surfaces are affine in `(u, v)`: `(x/z, y/z, 1/z)` for
    /// perspective views, `(x, y, z)` for orthographic ones. On a planar patch
    /// the result is therefore exact. Returns `None` when a contributing
    /// neighbor is missing or invalid.
    pub fn sample(&self, u: f64, v: f64, projection: Projection) -> Option<Vector3<f64>> {
        let x = u - 0.5;
        let y = v - 0.5;
        if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 {
            return None;
        }
        let c0 = x.floor() as usize;
        let r0 = y.floor() as usize;
        let fx = x - c0 as f64;
        let fy = y - r0 as f64;
        let taps = [
            (r0, c0, (1.0 - fx) * (1.0 - fy)),
            (r0, c0 + 1, fx * (1.0 - fy)),
            (r0 + 1, c0, (1.0 - fx) * fy),
            (r0 + 1, c0 + 1, fx * fy),
        ];
        let mut acc = Vector3::zeros();
        for (r, c, w) in taps {
            if w == 0.0 {
                continue;
            }
            if r >= self.height || c >= self.width {
                return None;
            }
            let p = self.get(r, c)?;
            let feat = match projection {
                Projection::Perspective => {
                    if p.z <= 0.0 {
                        return None;
                    }
                    Vector3::new(p.x / p.z, p.y / p.z, 1.0 / p.z)
                }
                Projection::Orthographic => p,
            };
            acc += feat * w;
        }
        match projection {
            Projection::Perspective => {
                let z = 1.0 / acc.z;
                Some(Vector3::new(acc.x * z, acc.y * z, z))
            }
            Projection::Orthographic => Some(acc),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_validity_from_values() {
        let g = DepthGrid::from_values(1, 4, vec![1.0, 0.0, f64::NAN, -2.0]).unwrap();
        assert_eq!(g.valid, vec![true, false, false, false]);
        assert!(DepthGrid::from_values(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn perspective_sample_is_exact_on_a_tilted_plane() {
        let intr = Intrinsics::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap();
        // plane n·X = d in camera frame, facing the camera
        let n = Vector3::new(0.1, -0.3, 1.0).normalize();
        let d = 10.0;
        let mut depth = DepthGrid::invalid(24, 32);
        for r in 0..24 {
            for c in 0..32 {
                let (u, v) = pixel_center(r, c);
                let ray = intr.unproject(u, v, 1.0);
                depth.set(r, c, d / n.dot(&ray));
            }
        }
        let pm = PointMap::from_pinhole_depth(&depth, &intr).unwrap();
        let (u, v) = (7.3, 11.81);
        let got = pm.sample(u, v, Projection::Perspective).unwrap();
        let ray = intr.unproject(u, v, 1.0);
        let want = ray * (d / n.dot(&ray));
        assert!((got - want).norm() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn sample_at_center_reads_pixel_and_rejects_outside() {
        let g = DepthGrid::from_values(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pm = PointMap::from_ortho_depth(&g, 0.5).unwrap();
        assert_eq!(pm.sample(1.5, 0.5, Projection::Orthographic), pm.get(0, 1));
        assert!(pm.sample(1.9, 1.9, Projection::Orthographic).is_none());
        assert!(pm.sample(0.2, 0.5, Projection::Orthographic).is_none());
    }
}

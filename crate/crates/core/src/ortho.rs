//! Orthographic satellite model: lifting tile pixels with `ρ`, locating world
//! points and cameras on a tile, altitude sweeps and tile-shift sampling.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frames::{attitude_rotation, Pose, ViewCamera, ViewRecord};
use crate::synth::SceneSpec;
use crate::{Error, Result};

/// Canonical raw satellite camera altitude above ground, meters.
pub const DEFAULT_RAW_SATELLITE_ALTITUDE_M: f64 = 5726.0;
/// Field-of-view range of the virtual satellite pinhole, degrees.
pub const SATELLITE_FOV_RANGE_DEG: (f64, f64) = (2.0, 5.0);
/// Side length of the real-world test tiles, meters.
pub const SHIFTED_TILE_EXTENT_M: f64 = 110.0;
/// Maximum east/south GPS-uncertainty shift applied to those tiles, meters.
pub const TILE_SHIFT_MAX_M: f64 = 20.0;

const NADIR_TOL: f64 = 1e-6;

/// An orthographic satellite view: a virtual nadir camera with pixel scale `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatTile {
    pub width: usize,
    pub height: usize,
    /// Scene units per pixel.
    pub rho: f64,
    pub pose: Pose,
}

impl SatTile {
    pub fn new(width: usize, height: usize, rho: f64, pose: Pose) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Configuration(format!("rho must be positive, got {rho}")));
        }
        if (pose.forward() - Vector3::y()).norm() > NADIR_TOL {
            return Err(Error::Validation(format!(
                "tile camera is not nadir: forward = {:?}",
                pose.forward()
            )));
        }
        Ok(Self {
            width,
            height,
            rho,
            pose,
        })
    }

    /// Nadir tile whose image-up axis points along `heading_deg` (0 = north, so `+u` is east).
    pub fn nadir(center: Vector3<f64>, heading_deg: f64, width: usize, height: usize, rho: f64) -> Result<Self> {
        let pose = Pose::from_center(attitude_rotation(heading_deg, 90.0, 0.0), center);
        Self::new(width, height, rho, pose)
    }

    /// Tile described by a satellite view record.
    pub fn from_view(view: &ViewRecord) -> Result<Self> {
        match view.camera {
            ViewCamera::Ortho { width, height, rho } => Self::new(width, height, rho, view.pose),
            ViewCamera::Pinhole(_) => Err(Error::Validation("view is not a satellite tile".into())),
        }
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

/// Lifts tile pixel `(u, v)` with depth `z` into the tile's camera frame.
pub fn ortho_lift(u: f64, v: f64, z: f64, tile: &SatTile) -> Result<Vector3<f64>> {
    if !(tile.rho > 0.0) {
        return Err(Error::Configuration(format!("rho must be positive, got {}", tile.rho)));
    }
    if !(z > 0.0) || !u.is_finite() || !v.is_finite() {
        return Err(Error::Validation(format!("cannot lift ({u}, {v}) at depth {z}")));
    }
    let (cu, cv) = tile.principal_point();
    Ok(Vector3::new((u - cu) * tile.rho, (v - cv) * tile.rho, z))
}

/// Pixel coordinates of a world point on the tile. Off-tile results are not clamped.
pub fn locate_on_tile(p_world: &Vector3<f64>, tile: &SatTile) -> (f64, f64) {
    let local = tile.pose.transform(p_world);
    let (cu, cv) = tile.principal_point();
    (local.x / tile.rho + cu, local.y / tile.rho + cv)
}

/// On-tile position and heading of a perspective camera.
///
/// The heading is measured in the tile frame, clockwise from the tile's
/// image-up axis, so for north-up tiles it is the compass yaw. When the
/// camera looks straight down the forward axis has no horizontal component
/// and the projected image-up axis is used instead. Returns degrees in (−180, 180].
pub fn camera_on_tile(cam: &Pose, tile: &SatTile) -> (f64, f64, f64) {
    let (u, v) = locate_on_tile(&cam.center(), tile);
    (u, v, heading_on_tile(cam, tile))
}

pub(crate) fn heading_on_tile(cam: &Pose, tile: &SatTile) -> f64 {
    let to_tile = |d: Vector3<f64>| tile.pose.rotation * d;
    let f = to_tile(cam.forward());
    let dir = if f.x.hypot(f.y) > NADIR_TOL { f } else { to_tile(-cam.down()) };
    // tile +u is "east", tile −v is "north"
    wrap_degrees(dir.x.atan2(-dir.y).to_degrees())
}

/// Wraps an angle in degrees into (−180, 180].
pub fn wrap_degrees(a: f64) -> f64 {
    let mut w = a % 360.0;
    if w <= -180.0 {
        w += 360.0;
    } else if w > 180.0 {
        w -= 360.0;
    }
    w
}

/// Rendering setup of the virtual nadir pinhole used by the altitude sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Full field of view, degrees; must lie in the satellite FoV range.
    pub fov_deg: f64,
    /// Square image size in pixels.
    pub size: usize,
    /// World `(x, z)` of the plumb line the camera hangs on.
    pub center_x: f64,
    pub center_z: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fov_deg: 3.0,
            size: 64,
            center_x: 0.0,
            center_z: 0.0,
        }
    }
}

impl SweepConfig {
    fn check(&self) -> Result<()> {
        let (lo, hi) = SATELLITE_FOV_RANGE_DEG;
        if !(lo..=hi).contains(&self.fov_deg) {
            return Err(Error::Configuration(format!(
                "sweep field of view {}° outside [{lo}°, {hi}°]",
                self.fov_deg
            )));
        }
        if self.size < 2 {
            return Err(Error::Configuration("sweep image needs at least 2x2 pixels".into()));
        }
        Ok(())
    }
}

/// Renders the top-down height image the sweep compares: per pixel the
/// elevation of the first hit plus the scene's procedural albedo there.
/// Misses are `NaN`.
pub fn render_sweep_image(scene: &SceneSpec, altitude: f64, cfg: &SweepConfig) -> Result<Vec<f64>> {
    cfg.check()?;
    if !(altitude > 0.0) {
        return Err(Error::Validation(format!("altitude must be positive, got {altitude}")));
    }
    let intr = crate::frames::Intrinsics::from_hfov(cfg.fov_deg, cfg.size, cfg.size)?;
    let center = Vector3::new(cfg.center_x, -altitude, cfg.center_z);
    let pose = Pose::from_center(attitude_rotation(0.0, 90.0, 0.0), center);
    let mut out = Vec::with_capacity(cfg.size * cfg.size);
    for row in 0..cfg.size {
        for col in 0..cfg.size {
            let (u, v) = crate::grid::pixel_center(row, col);
            let dir = pose.rotation.transpose() * intr.unproject(u, v, 1.0);
            out.push(match scene.first_hit(&center, &dir) {
                Some(hit) => {
                    let p = center + dir * hit.t;
                    -p.y + scene.albedo(p.x, p.z)
                }
                None => f64::NAN,
            });
        }
    }
    Ok(out)
}

/// Zero-normalized cross-correlation over entries finite in both images.
pub fn zncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Recovers the altitude a nadir height image was rendered from by rendering
/// every candidate and keeping the best zero-normalized cross-correlation.
/// Ties go to the lower altitude.
pub fn altitude_sweep(target: &[f64], scene: &SceneSpec, candidates: &[f64], cfg: &SweepConfig) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Validation("altitude sweep needs at least one candidate".into()));
    }
    if target.len() != cfg.size * cfg.size {
        return Err(Error::Structural(format!(
            "target has {} pixels, sweep renders {}",
            target.len(),
            cfg.size * cfg.size
        )));
    }
    if zncc(target, target).is_none() {
        return Err(Error::Degenerate("target image has zero variance".into()));
    }
    let scored: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&alt| {
            let img = render_sweep_image(scene, alt, cfg)?;
            Ok((alt, zncc(target, &img).unwrap_or(f64::NEG_INFINITY)))
        })
        .collect::<Result<_>>()?;
    let best = scored
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                cand
            } else {
                best
            }
        })
        .expect("non-empty");
    Ok(best.0)
}

/// Uniform east/south tile shift in `[−max_shift, max_shift]` per axis.
pub fn tile_shift_sample<R: Rng + ?Sized>(tile_extent: f64, max_shift: f64, rng: &mut R) -> Result<(f64, f64)> {
    if !(max_shift >= 0.0) || !(tile_extent > 0.0) {
        return Err(Error::Validation(format!(
            "tile shift needs extent > 0 and max_shift ≥ 0 (got {tile_extent}, {max_shift})"
        )));
    }
    if max_shift == 0.0 {
        return Ok((0.0, 0.0));
    }
    let dx_east = rng.random_range(-max_shift..=max_shift);
    let dy_south = rng.random_range(-max_shift..=max_shift);
    Ok((dx_east, dy_south))
}

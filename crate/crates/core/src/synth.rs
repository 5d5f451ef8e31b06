//! Synthetic tri-view scenes: analytic plane-and-box worlds, exact depth
//! rendering, sample assembly with ground-truth correspondences, and seeded
//! corruption of ground truth into predictions with known errors.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{Correspondence, CorrespondenceSet, CorrespondenceSource};
use crate::frames::{
    attitude_rotation, local_to_geo, pose_from_geo, redefine_altitudes, GeoPoint, Intrinsics, Modality, Pose,
    TriViewSample, ViewCamera, ViewRecord, SATELLITE_HEIGHT_M,
};
use crate::grid::{pixel_center, DepthGrid, PointMap};
use crate::ortho::{tile_shift_sample, SatTile, DEFAULT_RAW_SATELLITE_ALTITUDE_M, SATELLITE_FOV_RANGE_DEG};
use crate::{Error, Result};

const T_MIN: f64 = 1e-9;
/// Label of pixels whose ray hits nothing.
pub const MISS: u32 = u32::MAX;
/// Label of the ground plane; box faces are `1 + 6·box + face`.
pub const PLANE_LABEL: u32 = 0;

/// Terrain slope bound of [`SceneSpec::random`]. Over a 300 m tile seen with
/// a 2° field of view, a slope `α` separates the pinhole and orthographic
/// renders by up to `tan²α · 150 m · tan 1°`, which stays under 1 cm here.
pub const MAX_RANDOM_TILT_DEG: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub point: Vector3<f64>,
    /// Unit normal pointing up (negative `y`).
    pub normal: Vector3<f64>,
    /// The plane is a square of this half-size around `point` in `(x, z)`.
    pub half_extent: f64,
}

impl GroundPlane {
    /// World `y` of the plane at horizontal position `(x, z)`.
    pub fn y_at(&self, x: f64, z: f64) -> f64 {
        let n = &self.normal;
        self.point.y - (n.x * (x - self.point.x) + n.z * (z - self.point.z)) / n.y
    }

    /// Signed height above the plane along its normal.
    pub fn height_of(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.point))
    }
}

/// Axis-aligned box in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl BoxSpec {
    pub fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|k| p[k] > self.min[k] - margin && p[k] < self.max[k] + margin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub plane: GroundPlane,
    pub boxes: Vec<BoxSpec>,
    pub texture_seed: u64,
}

/// First intersection along a ray: parameter `t` and surface label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub label: u32,
}

impl SceneSpec {
    pub fn new(plane: GroundPlane, boxes: Vec<BoxSpec>, texture_seed: u64) -> Result<Self> {
        let n = plane.normal;
        if (n.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("plane normal must be unit length".into()));
        }
        if -n.y < 30f64.to_radians().cos() {
            return Err(Error::Validation("plane normal must lie within 30° of up".into()));
        }
        if !(plane.half_extent > 0.0) {
            return Err(Error::Validation("plane extent must be positive".into()));
        }
        for (i, b) in boxes.iter().enumerate() {
            if (0..3).any(|k| !(b.min[k] < b.max[k])) {
                return Err(Error::Validation(format!("box {i} has empty extent")));
            }
            let top_above = [(b.min.x, b.min.z), (b.min.x, b.max.z), (b.max.x, b.min.z), (b.max.x, b.max.z)]
                .iter()
                .all(|&(x, z)| plane.height_of(&Vector3::new(x, b.min.y, z)) > 0.0);
            if !top_above {
                return Err(Error::Validation(format!("box {i} does not rise above the ground plane")));
            }
        }
        Ok(Self {
            plane,
            boxes,
            texture_seed,
        })
    }

    /// Horizontal plane `y = 0` with no boxes.
    pub fn flat(half_extent: f64, texture_seed: u64) -> Self {
        Self {
            plane: GroundPlane {
                point: Vector3::zeros(),
                normal: -Vector3::y(),
                half_extent,
            },
            boxes: Vec::new(),
            texture_seed,
        }
    }

    /// Seeded scene: a ground plane tilted by at most `MAX_RANDOM_TILT_DEG` and
    /// 8–16 boxes placed 60–150 m from the origin, leaving a clear area in the
    /// middle.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tilt = rng.random_range(0.0..MAX_RANDOM_TILT_DEG).to_radians();
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let normal = Vector3::new(tilt.sin() * az.cos(), -tilt.cos(), tilt.sin() * az.sin());
        let plane = GroundPlane {
            point: Vector3::zeros(),
            normal,
            half_extent: 400.0,
        };
        let count = rng.random_range(8..=16);
        let mut boxes = Vec::with_capacity(count);
        for _ in 0..count {
            let r = rng.random_range(60.0..150.0);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let (cx, cz) = (r * a.cos(), r * a.sin());
            let hx = rng.random_range(4.0..15.0);
            let hz = rng.random_range(4.0..15.0);
            let height = rng.random_range(5.0..40.0);
            let corners = [(cx - hx, cz - hz), (cx - hx, cz + hz), (cx + hx, cz - hz), (cx + hx, cz + hz)];
            let ys = corners.map(|(x, z)| plane.y_at(x, z));
            let deepest = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let highest = ys.iter().copied().fold(f64::INFINITY, f64::min);
            boxes.push(BoxSpec {
                min: Vector3::new(cx - hx, highest - height, cz - hz),
                max: Vector3::new(cx + hx, deepest + 1.0, cz + hz),
            });
        }
        Self {
            plane,
            boxes,
            texture_seed: rng.random(),
        }
    }

    /// Nearest intersection with `t > 1e-9` of the ray `origin + t·dir`.
    pub fn first_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, label: u32| {
            if t > T_MIN && best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, label });
            }
        };
        let pl = &self.plane;
        let denom = pl.normal.dot(dir);
        if denom.abs() > 1e-15 {
            let t = pl.normal.dot(&(pl.point - origin)) / denom;
            let p = origin + dir * t;
            if (p.x - pl.point.x).abs() <= pl.half_extent && (p.z - pl.point.z).abs() <= pl.half_extent {
                consider(t, PLANE_LABEL);
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some((t, face)) = ray_box(origin, dir, b) {
                consider(t, 1 + 6 * i as u32 + face);
            }
        }
        best
    }

    /// Distance of `p` from the surface with the given label (0 when on it).
    pub fn surface_residual(&self, label: u32, p: &Vector3<f64>) -> f64 {
        if label == PLANE_LABEL {
            return self.plane.height_of(p).abs();
        }
        let idx = (label - 1) as usize;
        let b = &self.boxes[idx / 6];
        let (axis, side) = ((idx % 6) / 2, idx % 2);
        let bound = if side == 0 { b.min[axis] } else { b.max[axis] };
        let mut r = (p[axis] - bound).abs();
        for k in (0..3).filter(|k| *k != axis) {
            r = r.max(b.min[k] - p[k]).max(p[k] - b.max[k]);
        }
        r
    }

    pub fn inside_any_box(&self, p: &Vector3<f64>, margin: f64) -> bool {
        self.boxes.iter().any(|b| b.contains(p, margin))
    }

    pub fn texture(&self) -> Texture {
        Texture::new(self.texture_seed)
    }

    /// Procedural scalar albedo at horizontal position `(x, z)`.
    pub fn albedo(&self, x: f64, z: f64) -> f64 {
        self.texture().at(x, z)
    }
}

/// Sum of seeded plane waves with wavelengths of 3–25 m.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    waves: Vec<[f64; 4]>,
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_0a1b);
        let waves = (0..6)
            .map(|_| {
                let k = std::f64::consts::TAU / rng.random_range(3.0..25.0);
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                [k * dir.cos(), k * dir.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..2.0)]
            })
            .collect();
        Self { waves }
    }

    pub fn at(&self, x: f64, z: f64) -> f64 {
        self.waves.iter().map(|[kx, kz, ph, a]| a * (kx * x + kz * z + ph).sin()).sum()
    }
}

/// Slab test; returns entry parameter and face index `2·axis + (0 = min, 1 = max)`.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, b: &BoxSpec) -> Option<(f64, u32)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut face = 0u32;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < b.min[k] || o[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let (t0, f0, t1) = if d[k] > 0.0 {
            ((b.min[k] - o[k]) / d[k], 2 * k as u32, (b.max[k] - o[k]) / d[k])
        } else {
            ((b.max[k] - o[k]) / d[k], 2 * k as u32 + 1, (b.min[k] - o[k]) / d[k])
        };
        if t0 > t_near {
            t_near = t0;
            face = f0;
        }
        t_far = t_far.min(t1);
    }
    (t_near <= t_far && t_near > T_MIN).then_some((t_near, face))
}

/// Pinhole depth render with per-pixel surface labels.
pub fn render_depth_labeled(scene: &SceneSpec, pose: &Pose, intr: &Intrinsics) -> (DepthGrid, Vec<u32>) {
    let center = pose.center();
    let rt = pose.rotation.transpose();
    let rows: Vec<Vec<(f64, u32)>> = (0..intr.height)
        .into_par_iter()
        .map(|row| {
            (0..intr.width)
                .map(|col| {
                    let (u, v) = pixel_center(row, col);
                    // camera-z of the direction is 1, so the ray parameter is the depth
                    let dir = rt * intr.unproject(u, v, 1.0);
                    scene.first_hit(&center, &dir).map_or((0.0, MISS), |h| (h.t, h.label))
                })
                .collect()
        })
        .collect();
    assemble(intr.height, intr.width, rows)
}

/// Exact pinhole depth (camera-frame `z` of the nearest hit); misses are invalid.
pub fn render_depth(scene: &SceneSpec, pose: &Pose, intr: &Intrinsics) -> DepthGrid {
    render_depth_labeled(scene, pose, intr).0
}

/// Orthographic render of a nadir tile with per-pixel surface labels.
pub fn render_ortho_labeled(scene: &SceneSpec, tile: &SatTile) -> (DepthGrid, Vec<u32>) {
    let center = tile.pose.center();
    let rt = tile.pose.rotation.transpose();
    let dir = rt * Vector3::z();
    let (cu, cv) = tile.principal_point();
    let rows: Vec<Vec<(f64, u32)>> = (0..tile.height)
        .into_par_iter()
        .map(|row| {
            (0..tile.width)
                .map(|col| {
                    let (u, v) = pixel_center(row, col);
                    let origin = center + rt * Vector3::new((u - cu) * tile.rho, (v - cv) * tile.rho, 0.0);
                    scene.first_hit(&origin, &dir).map_or((0.0, MISS), |h| (h.t, h.label))
                })
                .collect()
        })
        .collect();
    assemble(tile.height, tile.width, rows)
}

/// Depth measured vertically from the tile camera plane to the first hit.
pub fn render_ortho(scene: &SceneSpec, tile: &SatTile) -> DepthGrid {
    render_ortho_labeled(scene, tile).0
}

fn assemble(height: usize, width: usize, rows: Vec<Vec<(f64, u32)>>) -> (DepthGrid, Vec<u32>) {
    let mut depth = DepthGrid::invalid(height, width);
    let mut labels = vec![MISS; height * width];
    for (row, cells) in rows.into_iter().enumerate() {
        for (col, (t, label)) in cells.into_iter().enumerate() {
            if label != MISS {
                depth.set(row, col, t);
                labels[row * width + col] = label;
            }
        }
    }
    (depth, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    pub tile_extent_m: f64,
    pub tile_px: usize,
    pub uav_altitude_m: (f64, f64),
    pub uav_pitch_deg: (f64, f64),
    /// Density ratio of pitches in 60–90° relative to lower pitches.
    pub high_pitch_oversample: f64,
    pub ground_height_m: f64,
    pub ground_pitch_jitter_deg: f64,
    pub satellite_fov_deg: f64,
    pub raw_satellite_altitude_m: f64,
    /// Shift bound of the second satellite tile, meters per axis.
    pub tile_shift_max_m: f64,
    /// Draw a random in-plane rotation for every tile instead of north-up.
    pub rotate_tiles: bool,
    pub view_width: usize,
    pub view_height: usize,
    pub ground_hfov_deg: f64,
    pub uav_hfov_deg: f64,
    /// Pixel stride of the correspondence sampling grid.
    pub corr_stride: usize,
    /// Minimum correspondences required for every view pair.
    pub min_pair_corr: usize,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            tile_extent_m: 300.0,
            tile_px: 256,
            uav_altitude_m: (30.0, 120.0),
            uav_pitch_deg: (0.0, 90.0),
            high_pitch_oversample: 2.0,
            ground_height_m: 1.7,
            ground_pitch_jitter_deg: 5.0,
            satellite_fov_deg: 3.0,
            raw_satellite_altitude_m: DEFAULT_RAW_SATELLITE_ALTITUDE_M,
            tile_shift_max_m: crate::ortho::TILE_SHIFT_MAX_M,
            rotate_tiles: false,
            view_width: 128,
            view_height: 96,
            ground_hfov_deg: 90.0,
            uav_hfov_deg: 70.0,
            corr_stride: 4,
            min_pair_corr: 8,
        }
    }
}

impl CaptureConfig {
    pub fn check(&self) -> Result<()> {
        let (a0, a1) = self.uav_altitude_m;
        let (p0, p1) = self.uav_pitch_deg;
        let (f0, f1) = SATELLITE_FOV_RANGE_DEG;
        let checks = [
            (self.tile_extent_m > 0.0 && self.tile_px > 0, "tile extent and size must be positive"),
            (a0 > 0.0 && a0 <= a1, "uav altitude range must be positive and ordered"),
            ((0.0..=90.0).contains(&p0) && p0 <= p1 && p1 <= 90.0, "uav pitch range must lie in [0, 90]"),
            (self.high_pitch_oversample > 0.0, "pitch oversampling ratio must be positive"),
            (self.ground_height_m > 0.0, "ground camera height must be positive"),
            ((0.0..45.0).contains(&self.ground_pitch_jitter_deg), "ground pitch jitter must lie in [0, 45)"),
            ((f0..=f1).contains(&self.satellite_fov_deg), "satellite field of view must lie in [2, 5] degrees"),
            (self.raw_satellite_altitude_m > 0.0, "raw satellite altitude must be positive"),
            (self.tile_shift_max_m >= 0.0, "tile shift must be non-negative"),
            (self.view_width >= 2 && self.view_height >= 2, "views need at least 2x2 pixels"),
            (self.corr_stride >= 1, "correspondence stride must be at least 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Validation(msg.into()));
            }
        }
        Ok(())
    }

    /// Ground-truth `ρ`: tile extent over tile width.
    pub fn rho(&self) -> f64 {
        self.tile_extent_m / self.tile_px as f64
    }
}

/// A generated sample with all its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub sample: TriViewSample,
    /// Per-view points in each view's local frame.
    pub pointmaps: Vec<PointMap>,
    /// Per-view surface labels (`MISS` where nothing was hit).
    pub labels: Vec<Vec<u32>>,
    pub correspondences: CorrespondenceSet,
    pub scene: SceneSpec,
    pub seed: u64,
}

impl SyntheticSample {
    /// Tile of a satellite view, in the current world frame.
    pub fn tile(&self, view: usize) -> Result<SatTile> {
        SatTile::from_view(&self.sample.views[view])
    }
}

/// Local-frame point map of a view's depth.
pub fn lift_view(view: &ViewRecord) -> Result<PointMap> {
    let depth = view
        .depth
        .as_ref()
        .ok_or_else(|| Error::Structural("view has no depth grid".into()))?;
    match view.camera {
        ViewCamera::Pinhole(intr) => PointMap::from_pinhole_depth(depth, &intr),
        ViewCamera::Ortho { rho, .. } => PointMap::from_ortho_depth(depth, rho),
    }
}

fn sample_pitch(cfg: &CaptureConfig, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = cfg.uav_pitch_deg;
    let split = 60f64.clamp(lo, hi);
    let low_mass = split - lo;
    let high_mass = (hi - split) * cfg.high_pitch_oversample;
    if low_mass + high_mass <= 0.0 {
        return lo;
    }
    if rng.random_range(0.0..low_mass + high_mass) < low_mass {
        rng.random_range(lo..=split)
    } else {
        rng.random_range(split..=hi)
    }
}

/// Yaw (degrees from north, clockwise) of the horizontal direction `from → to`.
fn yaw_towards(from: &Vector3<f64>, to: &Vector3<f64>) -> f64 {
    let d = to - from;
    d.z.atan2(-d.x).to_degrees()
}

/// Assembles a tri-view sample over `scene`: two ground cameras around a
/// common focus, two UAVs looking at it, and two nadir tiles (the second one
/// shifted). Depths are rendered exactly, altitudes are redefined, and
/// ground-truth correspondences are collected for every view pair.
pub fn make_sample(scene: &SceneSpec, cfg: &CaptureConfig, seed: u64) -> Result<SyntheticSample> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = GeoPoint::new(
        rng.random_range(-60.0..60.0),
        rng.random_range(-179.0..179.0),
        rng.random_range(0.0..300.0),
    )?;
    let fx = rng.random_range(-8.0..8.0);
    let fz = rng.random_range(-8.0..8.0);
    let focus = Vector3::new(fx, scene.plane.y_at(fx, fz), fz);
    let ground_intr = Intrinsics::from_hfov(cfg.ground_hfov_deg, cfg.view_width, cfg.view_height)?;
    let uav_intr = Intrinsics::from_hfov(cfg.uav_hfov_deg, cfg.view_width, cfg.view_height)?;
    let rho = cfg.rho();

    for _attempt in 0..50 {
        let mut views = Vec::with_capacity(6);
        let mut labels = Vec::with_capacity(6);
        let mut placed = true;

        for k in 0..2 {
            let (dx, dz) = if k == 0 {
                (0.0, 0.0)
            } else {
                tile_shift_sample(cfg.tile_extent_m, cfg.tile_shift_max_m, &mut rng)?
            };
            let heading = if cfg.rotate_tiles { rng.random_range(-180.0..180.0) } else { 0.0 };
            // east shift is +z, south shift is +x
            let c = Vector3::new(focus.x + dz, focus.y - cfg.raw_satellite_altitude_m, focus.z + dx);
            let pose = pose_from_geo(&local_to_geo(&c, &origin)?, heading, 90.0, 0.0, &origin)?;
            let tile = SatTile::new(cfg.tile_px, cfg.tile_px, rho, pose)?;
            let (depth, lab) = render_ortho_labeled(scene, &tile);
            views.push(ViewRecord {
                modality: Modality::Satellite,
                pose,
                camera: ViewCamera::Ortho {
                    width: cfg.tile_px,
                    height: cfg.tile_px,
                    rho,
                },
                depth: Some(depth),
            });
            labels.push(lab);
        }

        for _ in 0..2 {
            let alt = rng.random_range(cfg.uav_altitude_m.0..=cfg.uav_altitude_m.1);
            let pitch = sample_pitch(cfg, &mut rng);
            let dist = alt / pitch.clamp(20.0, 90.0).to_radians().tan();
            let az = rng.random_range(0.0..std::f64::consts::TAU);
            let c = Vector3::new(focus.x + dist * az.cos(), focus.y - alt, focus.z + dist * az.sin());
            let yaw = if dist > 1e-6 { yaw_towards(&c, &focus) } else { rng.random_range(-180.0..180.0) };
            if scene.inside_any_box(&c, 1.0) || scene.plane.height_of(&c) <= 1.0 {
                placed = false;
            }
            let pose = pose_from_geo(&local_to_geo(&c, &origin)?, yaw, pitch, 0.0, &origin)?;
            let (depth, lab) = render_depth_labeled(scene, &pose, &uav_intr);
            views.push(ViewRecord {
                modality: Modality::Uav,
                pose,
                camera: ViewCamera::Pinhole(uav_intr),
                depth: Some(depth),
            });
            labels.push(lab);
        }

        for _ in 0..2 {
            let r = rng.random_range(10.0..25.0);
            let az = rng.random_range(0.0..std::f64::consts::TAU);
            let (x, z) = (focus.x + r * az.cos(), focus.z + r * az.sin());
            let c = Vector3::new(x, scene.plane.y_at(x, z) - cfg.ground_height_m, z);
            let yaw = yaw_towards(&c, &focus) + rng.random_range(-15.0..15.0);
            let j = cfg.ground_pitch_jitter_deg;
            let pitch = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
            if scene.inside_any_box(&c, 0.5) {
                placed = false;
            }
            let pose = pose_from_geo(&local_to_geo(&c, &origin)?, yaw, pitch, 0.0, &origin)?;
            let (depth, lab) = render_depth_labeled(scene, &pose, &ground_intr);
            views.push(ViewRecord {
                modality: Modality::Ground,
                pose,
                camera: ViewCamera::Pinhole(ground_intr),
                depth: Some(depth),
            });
            labels.push(lab);
        }
        if !placed {
            continue;
        }

        let raw = TriViewSample {
            views,
            origin,
            meters_per_pixel_gt: rho,
            world_shift_y: 0.0,
        };
        let sample = redefine_altitudes(&raw, SATELLITE_HEIGHT_M)?;
        let pointmaps = sample.views.iter().map(lift_view).collect::<Result<Vec<_>>>()?;
        let correspondences = ground_truth_correspondences(&sample, &pointmaps, &labels, cfg.corr_stride)?;
        let mut per_pair = [[0usize; 6]; 6];
        for c in &correspondences.pairs {
            per_pair[c.view_a.min(c.view_b)][c.view_a.max(c.view_b)] += 1;
        }
        let enough = (0..6).all(|a| (a + 1..6).all(|b| per_pair[a][b] >= cfg.min_pair_corr));
        if !enough {
            continue;
        }
        return Ok(SyntheticSample {
            sample,
            pointmaps,
            labels,
            correspondences,
            scene: scene.clone(),
            seed,
        });
    }
    Err(Error::Structural(
        "could not place cameras with enough shared surface for every view pair".into(),
    ))
}

/// Pixel of a world point in a view and the point in that view's frame.
pub fn project_to_view(view: &ViewRecord, x_world: &Vector3<f64>) -> Option<(f64, f64, Vector3<f64>)> {
    let p = view.pose.transform(x_world);
    if !(p.z > 0.0) {
        return None;
    }
    let (u, v) = match view.camera {
        ViewCamera::Pinhole(intr) => intr.project(&p),
        ViewCamera::Ortho { width, height, rho } => {
            (p.x / rho + width as f64 / 2.0, p.y / rho + height as f64 / 2.0)
        }
    };
    Some((u, v, p))
}

/// Exact correspondences for every view pair.
///
/// Source pixels are taken on a stride grid from the perspective view of a
/// mixed pair (otherwise the lower index). A match is kept when all pixels
/// contributing to the bilinear lookup at the target location show the same
/// surface, which makes the interpolated point exact, and when that point
/// coincides with the projected one (no occlusion).
pub fn ground_truth_correspondences(
    sample: &TriViewSample,
    pointmaps: &[PointMap],
    labels: &[Vec<u32>],
    stride: usize,
) -> Result<CorrespondenceSet> {
    let n = sample.views.len();
    if pointmaps.len() != n || labels.len() != n {
        return Err(Error::Structural("one point map and label grid per view required".into()));
    }
    let mut jobs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let sat_a = sample.views[a].modality == Modality::Satellite;
            let sat_b = sample.views[b].modality == Modality::Satellite;
            jobs.push(if sat_a && !sat_b { (b, a) } else { (a, b) });
        }
    }
    let found: Vec<Vec<Correspondence>> = jobs
        .par_iter()
        .map(|&(src, dst)| pair_correspondences(sample, pointmaps, labels, src, dst, stride))
        .collect();
    Ok(CorrespondenceSet {
        pairs: found.into_iter().flatten().collect(),
        source: CorrespondenceSource::GroundTruth,
    })
}

fn pair_correspondences(
    sample: &TriViewSample,
    pointmaps: &[PointMap],
    labels: &[Vec<u32>],
    src: usize,
    dst: usize,
    stride: usize,
) -> Vec<Correspondence> {
    let (va, vb) = (&sample.views[src], &sample.views[dst]);
    let (pa, pb) = (&pointmaps[src], &pointmaps[dst]);
    let (h, w) = vb.camera.dims();
    let mut out = Vec::new();
    for row in (stride / 2..pa.height).step_by(stride) {
        for col in (stride / 2..pa.width).step_by(stride) {
            let Some(p_local) = pa.get(row, col) else { continue };
            let label = labels[src][pa.index(row, col)];
            let x_world = va.pose.inverse_transform(&p_local);
            let Some((u, v, p_b)) = project_to_view(vb, &x_world) else { continue };
            if !(u >= 0.5 && v >= 0.5 && u <= w as f64 - 0.5 && v <= h as f64 - 0.5) {
                continue;
            }
            let (x, y) = (u - 0.5, v - 0.5);
            let (c0, r0) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (x - c0 as f64, y - r0 as f64);
            let taps = [(r0, c0, true), (r0, c0 + 1, fx > 0.0), (r0 + 1, c0, fy > 0.0), (r0 + 1, c0 + 1, fx > 0.0 && fy > 0.0)];
            let same = taps
                .iter()
                .filter(|t| t.2)
                .all(|&(r, c, _)| r < h && c < w && labels[dst][r * w + c] == label);
            if !same {
                continue;
            }
            let Some(q) = pb.sample(u, v, vb.camera.projection()) else { continue };
            if (q - p_b).norm() > 1e-6 * p_b.norm().max(1.0) {
                continue;
            }
            out.push(Correspondence {
                view_a: src,
                pixel_a: (row, col),
                view_b: dst,
                pixel_b: (u, v),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationAxis {
    /// Uniformly random axis per view.
    Random,
    /// World up: pure yaw perturbation.
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Zero-mean Gaussian with the given standard deviation.
    Gaussian,
    /// Exactly the given magnitude with a random sign or direction.
    Fixed,
}

/// Noise levels for [`perturb`]; zero disables a component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub rot_deg: f64,
    pub rot_axis: RotationAxis,
    /// Camera-center displacement, meters.
    pub trans_m: f64,
    /// Per-point displacement in view-local frames.
    pub point_m: f64,
    /// Relative error of the satellite `ρ`.
    pub rho_rel: f64,
    pub kind: NoiseKind,
    /// Views to corrupt; `None` means all.
    pub views: Option<Vec<usize>>,
}

impl Default for Noise {
    fn default() -> Self {
        Self {
            rot_deg: 0.0,
            rot_axis: RotationAxis::Random,
            trans_m: 0.0,
            point_m: 0.0,
            rho_rel: 0.0,
            kind: NoiseKind::Gaussian,
            views: None,
        }
    }
}

/// A corrupted copy of a sample: poses, `ρ` and point maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample: TriViewSample,
    pub pointmaps: Vec<PointMap>,
}

/// Errors actually injected into one view.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InjectedError {
    pub rotation_deg: f64,
    pub rotation_axis: Vector3<f64>,
    /// World-frame camera-center displacement.
    pub center_offset: Vector3<f64>,
    /// Multiplier applied to `ρ` (1 when untouched).
    pub rho_factor: f64,
    pub point_rms: f64,
}

/// Applies seeded noise to ground truth and reports the injected errors.
///
/// Rotations act about the camera center, so they leave the center fixed.
/// Satellite views are only rotated about the vertical axis.
/// A `ρ` error also rescales the satellite point map's image-plane axes so
/// the prediction stays self-consistent.
pub fn perturb(
    sample: &TriViewSample,
    pointmaps: &[PointMap],
    noise: &Noise,
    seed: u64,
) -> Result<(Prediction, Vec<InjectedError>)> {
    let sigmas = [noise.rot_deg, noise.trans_m, noise.point_m, noise.rho_rel];
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Validation("noise levels must be non-negative".into()));
    }
    if pointmaps.len() != sample.views.len() {
        return Err(Error::Structural("one point map per view required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample.clone();
    let mut maps = pointmaps.to_vec();
    let mut injected = vec![
        InjectedError {
            rho_factor: 1.0,
            ..Default::default()
        };
        sample.views.len()
    ];
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |rng: &mut ChaCha8Rng, sigma: f64| -> f64 {
        match noise.kind {
            NoiseKind::Gaussian => sigma * std.sample(rng),
            NoiseKind::Fixed => {
                if rng.random_bool(0.5) {
                    sigma
                } else {
                    -sigma
                }
            }
        }
    };
    let unit = |rng: &mut ChaCha8Rng| -> Vector3<f64> {
        loop {
            let v = Vector3::new(std.sample(rng), std.sample(rng), std.sample(rng));
            if v.norm() > 1e-6 {
                return v.normalize();
            }
        }
    };

    for (i, view) in out.views.iter_mut().enumerate() {
        if noise.views.as_ref().is_some_and(|vs| !vs.contains(&i)) {
            continue;
        }
        let inj = &mut injected[i];
        let mut center = view.pose.center();
        let mut rotation = view.pose.rotation;
        if noise.rot_deg > 0.0 {
            let angle = draw(&mut rng, noise.rot_deg);
            let axis = match noise.rot_axis {
                RotationAxis::Random => unit(&mut rng),
                RotationAxis::Up => -Vector3::y(),
            };
            // a tile stays nadir, so it can only turn in its own plane
            let axis = if view.modality == Modality::Satellite { -Vector3::y() } else { axis };
            let q = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle.to_radians());
            // world directions seen by the camera rotate by q
            rotation *= q.matrix().transpose();
            inj.rotation_deg = angle.abs();
            inj.rotation_axis = axis * angle.signum();
        }
        if noise.trans_m > 0.0 {
            let offset = match noise.kind {
                NoiseKind::Gaussian => Vector3::from_fn(|_, _| noise.trans_m * std.sample(&mut rng)),
                NoiseKind::Fixed => unit(&mut rng) * noise.trans_m,
            };
            center += offset;
            inj.center_offset = offset;
        }
        if noise.rot_deg > 0.0 || noise.trans_m > 0.0 {
            view.pose = Pose::from_center(rotation, center);
        }
        if noise.rho_rel > 0.0 {
            if let ViewCamera::Ortho { rho, .. } = &mut view.camera {
                let factor = (1.0 + draw(&mut rng, noise.rho_rel)).max(1e-3);
                *rho *= factor;
                inj.rho_factor = factor;
                let map = &mut maps[i];
                for (p, ok) in map.points.iter_mut().zip(&map.valid) {
                    if *ok {
                        p.x *= factor;
                        p.y *= factor;
                    }
                }
            }
        }
        if noise.point_m > 0.0 {
            let mut sq = 0.0;
            let mut count = 0usize;
            let map = &mut maps[i];
            for (p, ok) in map.points.iter_mut().zip(&map.valid) {
                if *ok {
                    let d = Vector3::from_fn(|_, _| noise.point_m * std.sample(&mut rng));
                    *p += d;
                    sq += d.norm_squared();
                    count += 1;
                }
            }
            inj.point_rms = if count > 0 { (sq / count as f64).sqrt() } else { 0.0 };
        }
    }
    Ok((
        Prediction {
            sample: out,
            pointmaps: maps,
        },
        injected,
    ))
}

/// Rotation by `angle_deg` about a world axis, as a camera-side factor.
pub fn rotate_about_center(pose: &Pose, axis: &Vector3<f64>, angle_deg: f64) -> Pose {
    let q = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle_deg.to_radians());
    Pose::from_center(pose.rotation * q.matrix().transpose(), pose.center())
}

/// Nominal nadir pose of a tile at `center` with the given heading.
pub fn nadir_pose(center: Vector3<f64>, heading_deg: f64) -> Pose {
    Pose::from_center(attitude_rotation(heading_deg, 90.0, 0.0), center)
}

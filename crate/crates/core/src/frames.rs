//! Coordinate frames, geodetic-to-local conversion, camera pose assembly,
//! relative poses and per-sample altitude redefinition.
//!
//! The world frame is local and right-handed: `x` south, `y` down, `z` east.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::grid::DepthGrid;
use crate::{Error, Result};

/// Equatorial Earth radius used by the local tangent-plane conversion.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Constant height the satellite cameras are placed at after altitude redefinition.
pub const SATELLITE_HEIGHT_M: f64 = 150.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    /// Degrees, WGS-84.
    pub lat: f64,
    /// Degrees, WGS-84.
    pub lon: f64,
    /// Meters above the reference ground.
    pub alt: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) || !alt.is_finite() {
            return Err(Error::Validation(format!(
                "geodetic point out of range: lat {lat}, lon {lon}, alt {alt}"
            )));
        }
        Ok(Self { lat, lon, alt })
    }
}

/// Converts a geodetic point to local world meters `(south, down, east)` around `origin`.
///
/// Uses an equirectangular tangent-plane approximation, valid for deltas
/// below one degree in latitude and longitude.
pub fn geo_to_local(p: &GeoPoint, origin: &GeoPoint) -> Result<Vector3<f64>> {
    let dlat = p.lat - origin.lat;
    let dlon = p.lon - origin.lon;
    if !(dlat.abs() < 1.0 && dlon.abs() < 1.0) {
        return Err(Error::Validation(format!(
            "geodetic delta ({dlat}°, {dlon}°) outside the 1° local-tangent window"
        )));
    }
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let north = dlat * k;
    let east = dlon * k * origin.lat.to_radians().cos();
    Ok(Vector3::new(-north, -(p.alt - origin.alt), east))
}

/// Inverse of [`geo_to_local`] for the same origin.
pub fn local_to_geo(x: &Vector3<f64>, origin: &GeoPoint) -> Result<GeoPoint> {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let coslat = origin.lat.to_radians().cos();
    if coslat <= 1e-12 {
        return Err(Error::Degenerate("origin at a pole".into()));
    }
    GeoPoint::new(origin.lat - x.x / k, origin.lon + x.z / (k * coslat), origin.alt - x.y)
}

/// Rigid world→camera transform: `x_cam = rotation · x_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// Validates that `rotation` is a proper rotation within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.check()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pose of a camera with the given orientation whose center sits at `center`.
    pub fn from_center(rotation: Matrix3<f64>, center: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn check(&self) -> Result<()> {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if !(err < ORTHONORMAL_TOL) || !((det - 1.0).abs() < ORTHONORMAL_TOL) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!(
                "not a rigid pose: |RᵀR − I|∞ = {err:e}, det = {det}"
            )));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera → world.
    pub fn inverse_transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera `+z` (viewing direction) expressed in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Camera `+x` (image right) in world coordinates.
    pub fn right(&self) -> Vector3<f64> {
        self.rotation.row(0).transpose()
    }

    /// Camera `+y` (image down) in world coordinates.
    pub fn down(&self) -> Vector3<f64> {
        self.rotation.row(1).transpose()
    }
}

/// Camera rotation (world→camera) for a heading/pitch/roll attitude.
///
/// Yaw is measured clockwise from north about world-down, pitch tilts the
/// forward axis downward (90° is nadir) and a positive roll turns the
/// image-right axis toward image-down.
pub fn attitude_rotation(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    let (sr, cr) = roll_deg.to_radians().sin_cos();
    // north = −x, east = +z, down = +y
    let heading = Vector3::new(-cy, 0.0, sy);
    let down = Vector3::new(0.0, 1.0, 0.0);
    let forward = heading * cp + down * sp;
    let right0 = Vector3::new(sy, 0.0, cy);
    let down0 = forward.cross(&right0);
    let right = right0 * cr + down0 * sr;
    let image_down = down0 * cr - right0 * sr;
    Matrix3::from_rows(&[right.transpose(), image_down.transpose(), forward.transpose()])
}

/// Assembles a world→camera pose from geodetic position and attitude angles.
pub fn pose_from_geo(pos: &GeoPoint, yaw_deg: f64, pitch_deg: f64, roll_deg: f64, origin: &GeoPoint) -> Result<Pose> {
    if !(yaw_deg.is_finite() && pitch_deg.is_finite() && roll_deg.is_finite()) {
        return Err(Error::Validation("attitude angles must be finite".into()));
    }
    let center = geo_to_local(pos, origin)?;
    Ok(Pose::from_center(attitude_rotation(yaw_deg, pitch_deg, roll_deg), center))
}

/// Transform taking points from camera `a`'s frame into camera `b`'s frame:
/// `R = R_b·R_aᵀ`, `t = t_b − R·t_a`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    let rotation = b.rotation * a.rotation.transpose();
    Pose {
        rotation,
        translation: b.translation - rotation * a.translation,
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cu: f64, cv: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cu,
            cv,
            width,
            height,
        };
        intr.check()?;
        Ok(intr)
    }

    /// Centered principal point and a horizontal field of view in degrees.
    pub fn from_hfov(hfov_deg: f64, width: usize, height: usize) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::Validation(format!("field of view {hfov_deg}° out of (0, 180)")));
        }
        let f = width as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cu > 0.0
            && self.cu < self.width as f64
            && self.cv > 0.0
            && self.cv < self.height as f64;
        if !ok {
            return Err(Error::Validation(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Camera-frame point at pixel `(u, v)` with camera-z `z`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cu) / self.fx * z, (v - self.cv) / self.fy * z, z)
    }

    /// Pixel coordinates of a camera-frame point (no bounds check).
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cu, self.fy * p.y / p.z + self.cv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Satellite,
    Uav,
    Ground,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Satellite, Modality::Uav, Modality::Ground];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Satellite => "satellite",
            Modality::Uav => "uav",
            Modality::Ground => "ground",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "satellite" => Ok(Modality::Satellite),
            "uav" => Ok(Modality::Uav),
            "ground" => Ok(Modality::Ground),
            other => Err(Error::Validation(format!("unknown modality {other:?}"))),
        }
    }
}

/// Camera model of a view: pinhole for perspective views, `ρ` for satellite tiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ViewCamera {
    Pinhole(Intrinsics),
    Ortho { width: usize, height: usize, rho: f64 },
}

impl ViewCamera {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ViewCamera::Pinhole(i) => (i.height, i.width),
            ViewCamera::Ortho { width, height, .. } => (*height, *width),
        }
    }

    pub fn projection(&self) -> crate::grid::Projection {
        match self {
            ViewCamera::Pinhole(_) => crate::grid::Projection::Perspective,
            ViewCamera::Ortho { .. } => crate::grid::Projection::Orthographic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub modality: Modality,
    pub pose: Pose,
    pub camera: ViewCamera,
    pub depth: Option<DepthGrid>,
}

impl ViewRecord {
    pub fn check(&self) -> Result<()> {
        self.pose.check()?;
        match (&self.modality, &self.camera) {
            (Modality::Satellite, ViewCamera::Ortho { rho, .. }) => {
                if !(*rho > 0.0) {
                    return Err(Error::Configuration(format!("satellite rho must be positive, got {rho}")));
                }
            }
            (Modality::Uav | Modality::Ground, ViewCamera::Pinhole(intr)) => intr.check()?,
            (m, _) => {
                return Err(Error::Validation(format!(
                    "{} view carries the wrong camera model",
                    m.as_str()
                )))
            }
        }
        if let Some(depth) = &self.depth {
            if (depth.height, depth.width) != self.camera.dims() {
                return Err(Error::Structural("depth grid does not match camera size".into()));
            }
        }
        Ok(())
    }
}

/// Two satellite, two UAV and two ground views sharing one world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriViewSample {
    pub views: Vec<ViewRecord>,
    pub origin: GeoPoint,
    /// Ground-truth meters per pixel of the satellite tile.
    pub meters_per_pixel_gt: f64,
    /// Total vertical offset added to world `y` since the raw capture frame.
    #[serde(default)]
    pub world_shift_y: f64,
}

impl TriViewSample {
    pub fn check(&self) -> Result<()> {
        check_modality_counts(self.views.iter().map(|v| v.modality))?;
        for v in &self.views {
            v.check()?;
        }
        Ok(())
    }

    /// Indices of the views with the given modality, in storage order.
    pub fn indices(&self, modality: Modality) -> Vec<usize> {
        self.views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.modality == modality)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Ensures exactly two views of every modality.
pub fn check_modality_counts(modalities: impl Iterator<Item = Modality>) -> Result<()> {
    let mut counts = [0usize; 3];
    for m in modalities {
        counts[m as usize] += 1;
    }
    if counts != [2, 2, 2] {
        return Err(Error::Structural(format!(
            "expected 2 satellite, 2 uav, 2 ground views; got {} / {} / {}",
            counts[0], counts[1], counts[2]
        )));
    }
    Ok(())
}

/// Re-anchors camera heights per sample.
///
/// The lower ground camera becomes `y = 0`, everything else is shifted
/// rigidly with it, and both satellite cameras are then placed at
/// `y = −h_sat` regardless of their raw altitude. Satellite depth grids are
/// re-referenced to the new camera plane so they stay consistent.
pub fn redefine_altitudes(sample: &TriViewSample, h_sat: f64) -> Result<TriViewSample> {
    check_modality_counts(sample.views.iter().map(|v| v.modality))?;
    let y_ref = sample
        .indices(Modality::Ground)
        .iter()
        .map(|&i| sample.views[i].pose.center().y)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = sample.clone();
    for view in &mut out.views {
        let old_center = view.pose.center();
        let mut center = old_center;
        center.y -= y_ref;
        if view.modality == Modality::Satellite {
            center.y = -h_sat;
            if let Some(depth) = &mut view.depth {
                // orthographic depth is measured from the camera plane
                let delta = (old_center.y - y_ref) - center.y;
                for (value, valid) in depth.values.iter_mut().zip(depth.valid.iter_mut()) {
                    if *valid {
                        *value += delta;
                        if !(*value > 0.0) {
                            *valid = false;
                            *value = 0.0;
                        }
                    }
                }
            }
        }
        view.pose = Pose::from_center(view.pose.rotation, center);
    }
    out.world_shift_y = sample.world_shift_y - y_ref;
    Ok(out)
}

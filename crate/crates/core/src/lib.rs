//! Geometry, optimization and evaluation machinery for satellite / UAV / ground
//! tri-view reconstruction and cross-view localization.
//!
//! World frame convention used throughout: `x` points south, `y` points down,
//! `z` points east. Extrinsics are world→camera, `x_cam = R·x_world + t`, and
//! camera frames are `+x` image-right, `+y` image-down, `+z` forward.

pub mod align;
pub mod depthfusion;
pub mod embedding;
mod error;
pub mod frames;
pub mod grid;
pub mod kdtree;
pub mod losses;
pub mod metrics;
pub mod ortho;
pub mod pairing;
pub mod synth;

pub use error::{Error, Result};
pub use frames::{GeoPoint, Intrinsics, Modality, Pose, TriViewSample, ViewCamera, ViewRecord};
pub use grid::{DepthGrid, PointMap};
pub use ortho::SatTile;

pub use nalgebra::{Matrix3, Vector2, Vector3};

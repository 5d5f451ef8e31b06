//! On-disk sample layout.
//!
//! A sample directory holds `meta.json` (poses, cameras, modalities) next to
//! raw little-endian `f32` arrays: `depth_<view>.f32` (row-major, 0 marks a
//! missing value) and optionally `pointmap_<view>.f32` (H×W×3 interleaved,
//! NaN marks a missing point). `corr.json` stores pixel correspondences.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use triview_core::align::CorrespondenceSet;
use triview_core::frames::check_modality_counts;
use triview_core::synth::lift_view;
use triview_core::{DepthGrid, GeoPoint, Intrinsics, Modality, PointMap, Pose, TriViewSample, ViewCamera, ViewRecord};

use crate::error::{CliError, CliResult};

pub const META_FILE: &str = "meta.json";
pub const CORR_FILE: &str = "corr.json";
pub const FORMAT: &str = "triview-sample/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub format: String,
    pub sample_id: String,
    pub scene: u64,
    pub seed: u64,
    pub origin: GeoPoint,
    pub meters_per_pixel_gt: f64,
    pub world_shift_y: f64,
    pub views: Vec<ViewMeta>,
    pub correspondences: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewMeta {
    pub name: String,
    pub modality: Modality,
    /// World→camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub camera: CameraMeta,
    pub depth: Option<String>,
    pub pointmap: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum CameraMeta {
    Pinhole {
        fx: f64,
        fy: f64,
        cu: f64,
        cv: f64,
        width: usize,
        height: usize,
    },
    Ortho {
        width: usize,
        height: usize,
        rho: f64,
    },
}

impl From<ViewCamera> for CameraMeta {
    fn from(c: ViewCamera) -> Self {
        match c {
            ViewCamera::Pinhole(i) => CameraMeta::Pinhole {
                fx: i.fx,
                fy: i.fy,
                cu: i.cu,
                cv: i.cv,
                width: i.width,
                height: i.height,
            },
            ViewCamera::Ortho { width, height, rho } => CameraMeta::Ortho { width, height, rho },
        }
    }
}

impl CameraMeta {
    fn to_camera(self) -> CliResult<ViewCamera> {
        Ok(match self {
            CameraMeta::Pinhole { fx, fy, cu, cv, width, height } => ViewCamera::Pinhole(Intrinsics::new(fx, fy, cu, cv, width, height)?),
            CameraMeta::Ortho { width, height, rho } => {
                if width == 0 || height == 0 {
                    return Err(CliError::Validation("tile size must be positive".into()));
                }
                ViewCamera::Ortho { width, height, rho }
            }
        })
    }
}

/// View names in storage order: `satellite0`, `satellite1`, `uav0`, ...
pub fn view_names(sample: &TriViewSample) -> Vec<String> {
    let mut seen = [0usize; 3];
    sample
        .views
        .iter()
        .map(|v| {
            let k = &mut seen[v.modality as usize];
            *k += 1;
            format!("{}{}", v.modality.as_str(), *k - 1)
        })
        .collect()
}

/// A sample as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub meta: SampleMeta,
    pub sample: TriViewSample,
    /// Stored point maps where present, otherwise lifted from depth.
    pub pointmaps: Vec<PointMap>,
    /// Which views had a point map file.
    pub stored_pointmaps: Vec<bool>,
    pub correspondences: Option<CorrespondenceSet>,
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Reads a raw little-endian `f32` array of exactly `len` values.
pub fn read_f32(path: &Path, len: usize) -> CliResult<Vec<f64>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != len * 4 {
        return Err(CliError::Validation(format!(
            "{}: expected {} bytes ({len} float32 values), found {}",
            path.display(),
            len * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_f32(path: &Path, values: impl IntoIterator<Item = f64>) -> CliResult<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

pub fn read_depth(path: &Path, height: usize, width: usize) -> CliResult<DepthGrid> {
    let values = read_f32(path, height * width)?;
    let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect::<Vec<_>>();
    let values = values.iter().zip(&valid).map(|(v, ok)| if *ok { *v } else { 0.0 }).collect();
    Ok(DepthGrid {
        height,
        width,
        values,
        valid,
    })
}

pub fn write_depth(path: &Path, depth: &DepthGrid) -> CliResult<()> {
    write_f32(path, depth.values.iter().zip(&depth.valid).map(|(v, ok)| if *ok { *v } else { 0.0 }))
}

pub fn read_pointmap(path: &Path, height: usize, width: usize) -> CliResult<PointMap> {
    let raw = read_f32(path, height * width * 3)?;
    let mut points = Vec::with_capacity(height * width);
    let mut valid = Vec::with_capacity(height * width);
    for c in raw.chunks_exact(3) {
        let ok = c.iter().all(|v| v.is_finite());
        points.push(if ok { Vector3::new(c[0], c[1], c[2]) } else { Vector3::zeros() });
        valid.push(ok);
    }
    Ok(PointMap::new(height, width, points, valid)?)
}

pub fn write_pointmap(path: &Path, map: &PointMap) -> CliResult<()> {
    write_f32(
        path,
        map.points
            .iter()
            .zip(&map.valid)
            .flat_map(|(p, ok)| if *ok { [p.x, p.y, p.z] } else { [f64::NAN; 3] }),
    )
}

fn safe_file_name(name: &str) -> bool {
    !name.is_empty() && !name.contains(['/', '\\']) && name != "." && name != ".."
}

/// Structural checks mirroring `docs/sample_meta.schema.json` plus the
/// geometric ones a schema cannot express.
pub fn validate_meta(meta: &SampleMeta) -> CliResult<()> {
    if meta.format != FORMAT {
        return Err(CliError::Validation(format!("unsupported format {:?}, expected {FORMAT:?}", meta.format)));
    }
    check_modality_counts(meta.views.iter().map(|v| v.modality)).map_err(|e| CliError::Validation(e.to_string()))?;
    if !(meta.meters_per_pixel_gt > 0.0) || !meta.world_shift_y.is_finite() {
        return Err(CliError::Validation("meters per pixel must be positive and the height shift finite".into()));
    }
    let mut names = HashSet::new();
    for v in &meta.views {
        if !names.insert(&v.name) || !safe_file_name(&v.name) {
            return Err(CliError::Validation(format!("view name {:?} is empty, repeated or not a plain name", v.name)));
        }
        for file in v.depth.iter().chain(&v.pointmap) {
            if !safe_file_name(file) {
                return Err(CliError::Validation(format!("file reference {file:?} must be a plain file name")));
            }
        }
    }
    if let Some(file) = &meta.correspondences {
        if !safe_file_name(file) {
            return Err(CliError::Validation(format!("file reference {file:?} must be a plain file name")));
        }
    }
    Ok(())
}

fn view_from_meta(v: &ViewMeta, dir: &Path) -> CliResult<ViewRecord> {
    let pose = Pose::new(Matrix3::from_fn(|r, c| v.rotation[r][c]), Vector3::from(v.translation))?;
    let camera = v.camera.to_camera()?;
    let (h, w) = camera.dims();
    let depth = v.depth.as_ref().map(|f| read_depth(&dir.join(f), h, w)).transpose()?;
    let view = ViewRecord {
        modality: v.modality,
        pose,
        camera,
        depth,
    };
    view.check()?;
    Ok(view)
}

pub fn read_sample(dir: &Path) -> CliResult<LoadedSample> {
    let meta: SampleMeta = read_json(&dir.join(META_FILE))?;
    validate_meta(&meta)?;
    let views = meta.views.iter().map(|v| view_from_meta(v, dir)).collect::<CliResult<Vec<_>>>()?;
    let sample = TriViewSample {
        views,
        origin: meta.origin,
        meters_per_pixel_gt: meta.meters_per_pixel_gt,
        world_shift_y: meta.world_shift_y,
    };
    let mut pointmaps = Vec::with_capacity(sample.views.len());
    let mut stored = Vec::with_capacity(sample.views.len());
    for (v, view) in meta.views.iter().zip(&sample.views) {
        let (h, w) = view.camera.dims();
        match &v.pointmap {
            Some(f) => {
                pointmaps.push(read_pointmap(&dir.join(f), h, w)?);
                stored.push(true);
            }
            None if view.depth.is_some() => {
                pointmaps.push(lift_view(view)?);
                stored.push(false);
            }
            None => return Err(CliError::Validation(format!("view {} has neither depth nor a point map", v.name))),
        }
    }
    let correspondences = meta
        .correspondences
        .as_ref()
        .map(|f| read_json::<CorrespondenceSet>(&dir.join(f)))
        .transpose()?;
    Ok(LoadedSample {
        meta,
        sample,
        pointmaps,
        stored_pointmaps: stored,
        correspondences,
    })
}

/// What to write for one sample.
pub struct SampleWrite<'a> {
    pub sample_id: &'a str,
    pub scene: u64,
    pub seed: u64,
    pub sample: &'a TriViewSample,
    /// Point maps to store, per view (`None` entries are skipped).
    pub pointmaps: Vec<Option<&'a PointMap>>,
    pub correspondences: Option<&'a CorrespondenceSet>,
}

pub fn write_sample(dir: &Path, w: &SampleWrite) -> CliResult<SampleMeta> {
    w.sample.check()?;
    create_dir(dir)?;
    let names = view_names(w.sample);
    let mut views = Vec::with_capacity(names.len());
    for (k, (view, name)) in w.sample.views.iter().zip(&names).enumerate() {
        let depth = match &view.depth {
            Some(d) => {
                let file = format!("depth_{name}.f32");
                write_depth(&dir.join(&file), d)?;
                Some(file)
            }
            None => None,
        };
        let pointmap = match w.pointmaps.get(k).copied().flatten() {
            Some(m) => {
                let file = format!("pointmap_{name}.f32");
                write_pointmap(&dir.join(&file), m)?;
                Some(file)
            }
            None => None,
        };
        let r = view.pose.rotation;
        views.push(ViewMeta {
            name: name.clone(),
            modality: view.modality,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: view.pose.translation.into(),
            camera: view.camera.into(),
            depth,
            pointmap,
        });
    }
    let correspondences = match w.correspondences {
        Some(c) => {
            write_json(&dir.join(CORR_FILE), c)?;
            Some(CORR_FILE.to_string())
        }
        None => None,
    };
    let meta = SampleMeta {
        format: FORMAT.into(),
        sample_id: w.sample_id.into(),
        scene: w.scene,
        seed: w.seed,
        origin: w.sample.origin,
        meters_per_pixel_gt: w.sample.meters_per_pixel_gt,
        world_shift_y: w.sample.world_shift_y,
        views,
        correspondences,
    };
    validate_meta(&meta)?;
    write_json(&dir.join(META_FILE), &meta)?;
    Ok(meta)
}

/// Writes a loaded sample back in the form it was read.
pub fn write_loaded(dir: &Path, s: &LoadedSample) -> CliResult<SampleMeta> {
    write_sample(
        dir,
        &SampleWrite {
            sample_id: &s.meta.sample_id,
            scene: s.meta.scene,
            seed: s.meta.seed,
            sample: &s.sample,
            pointmaps: s.pointmaps.iter().zip(&s.stored_pointmaps).map(|(m, keep)| keep.then_some(m)).collect(),
            correspondences: s.correspondences.as_ref(),
        },
    )
}

/// Sample directories below `root` (any directory holding `meta.json`),
/// keyed by their `/`-separated relative path and sorted.
pub fn find_samples(root: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    fn walk(dir: &Path, rel: &str, out: &mut Vec<(String, PathBuf)>) -> CliResult<()> {
        if dir.join(META_FILE).is_file() {
            out.push((if rel.is_empty() { ".".into() } else { rel.into() }, dir.to_path_buf()));
            return Ok(());
        }
        let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                let name = entry.file_name().to_string_lossy().into_owned();
                let child = if rel.is_empty() { name } else { format!("{rel}/{name}") };
                walk(&path, &child, out)?;
            }
        }
        Ok(())
    }
    if !root.is_dir() {
        return Err(CliError::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory")));
    }
    let mut out = Vec::new();
    walk(root, "", &mut out)?;
    out.sort();
    Ok(out)
}

//! Subcommands of the `triview` tool. Every command returns the JSON value it
//! prints on stdout.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use triview_core::align::{localize, nominal_tile_pose};
use triview_core::depthfusion::{fuse_and_filter, FusionOutcome, DEFAULT_PCC_MIN};
use triview_core::losses::{
    loss_cam, loss_conf, loss_geo, loss_norm, total_loss, ConfMap, LossComponents, LossWeights, DEFAULT_CONF_EPS,
    DEFAULT_HUBER_DELTA,
};
use triview_core::metrics::{aggregate, evaluate_sample, localization_eval};
use triview_core::ortho::{altitude_sweep, camera_on_tile, render_sweep_image, SweepConfig};
use triview_core::pairing::{select_tuples, Candidates, PairScore, DEFAULT_CELL_M};
use triview_core::synth::{make_sample, perturb, CaptureConfig, Noise, NoiseKind, RotationAxis, SceneSpec};
use triview_core::{DepthGrid, Modality, Pose, SatTile, ViewCamera};

use crate::error::{CliError, CliResult};
use crate::io::{self, find_samples, read_f32, read_json, read_sample, write_f32, write_json, LoadedSample, SampleWrite};
use crate::ply::{write_ply, PlyFormat, PointCloud};
use crate::report::write_report;
use crate::split::{split_scenes, DEFAULT_SPLIT_RATIOS};

pub const SCENE_FILE: &str = "scene.json";
pub const SPLIT_FILE: &str = "split.json";
pub const INJECTED_FILE: &str = "injected.json";

#[derive(Debug, Parser)]
#[command(name = "triview", version, about = "Tri-view reconstruction and cross-view localization toolkit")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Evaluate predictions against ground truth.
    Eval(EvalArgs),
    /// Place the perspective cameras of a sample on its satellite tile.
    Localize(LocalizeArgs),
    /// Pick view tuples of one scene by voxel overlap.
    Pair(PairArgs),
    /// Fit a relative depth map to a metric anchor and gate it by correlation.
    Fuse(FuseArgs),
    /// Training loss terms of a prediction.
    Losses(LossesArgs),
    /// Recover a satellite altitude by sweeping candidate heights.
    Sweep(SweepArgs),
    /// Render the top-down image the altitude sweep compares against.
    SweepTarget(SweepTargetArgs),
    /// Corrupt ground-truth samples into predictions with known errors.
    Perturb(PerturbArgs),
}

/// Parses `lo:hi`.
fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    if !(lo <= hi) {
        return Err(format!("range {s:?} is empty"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenes: usize,
    #[arg(long)]
    pub samples_per_scene: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300.0)]
    pub tile_extent: f64,
    #[arg(long, default_value_t = 256)]
    pub tile_px: usize,
    #[arg(long, default_value = "30:120", value_parser = parse_range)]
    pub uav_alt: (f64, f64),
    #[arg(long, default_value = "0:90", value_parser = parse_range)]
    pub uav_pitch: (f64, f64),
    #[arg(long, default_value_t = 128)]
    pub view_width: usize,
    #[arg(long, default_value_t = 96)]
    pub view_height: usize,
}

impl GenerateArgs {
    pub fn capture_config(&self) -> CaptureConfig {
        CaptureConfig {
            tile_extent_m: self.tile_extent,
            tile_px: self.tile_px,
            uav_altitude_m: self.uav_alt,
            uav_pitch_deg: self.uav_pitch,
            view_width: self.view_width,
            view_height: self.view_height,
            ..CaptureConfig::default()
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene: u64,
    pub seed: u64,
    pub spec: SceneSpec,
}

pub fn scene_dir_name(scene: u64) -> String {
    format!("scene_{scene:04}")
}

pub fn sample_dir_name(sample: usize) -> String {
    format!("sample_{sample:03}")
}

fn generate(a: &GenerateArgs) -> CliResult<Value> {
    if a.scenes == 0 || a.samples_per_scene == 0 {
        return Err(CliError::Validation("--scenes and --samples-per-scene must be positive".into()));
    }
    let cfg = a.capture_config();
    cfg.check()?;
    // one sequential stream so every sample's seed depends only on --seed and its position
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut jobs = Vec::with_capacity(a.scenes * a.samples_per_scene);
    let mut scenes = Vec::with_capacity(a.scenes);
    for s in 0..a.scenes as u64 {
        let scene_seed = rng.next_u64();
        scenes.push(SceneFile {
            scene: s,
            seed: scene_seed,
            spec: SceneSpec::random(scene_seed),
        });
        for k in 0..a.samples_per_scene {
            jobs.push((s as usize, k, rng.next_u64()));
        }
    }
    io::create_dir(&a.out)?;
    for sc in &scenes {
        let dir = a.out.join(scene_dir_name(sc.scene));
        io::create_dir(&dir)?;
        write_json(&dir.join(SCENE_FILE), sc)?;
    }
    let ids = jobs
        .par_iter()
        .map(|&(s, k, seed)| {
            let sc = &scenes[s];
            let synth = make_sample(&sc.spec, &cfg, seed)?;
            let id = format!("{}/{}", scene_dir_name(sc.scene), sample_dir_name(k));
            io::write_sample(
                &a.out.join(&id),
                &SampleWrite {
                    sample_id: &id,
                    scene: sc.scene,
                    seed,
                    sample: &synth.sample,
                    pointmaps: synth.pointmaps.iter().map(Some).collect(),
                    correspondences: Some(&synth.correspondences),
                },
            )?;
            Ok(id)
        })
        .collect::<CliResult<Vec<String>>>()?;
    let scene_ids: Vec<u64> = scenes.iter().map(|s| s.scene).collect();
    let split = split_scenes(&scene_ids, DEFAULT_SPLIT_RATIOS, a.seed);
    write_json(&a.out.join(SPLIT_FILE), &split)?;
    Ok(json!({
        "out": a.out,
        "scenes": a.scenes,
        "samples": ids,
        "split": split,
    }))
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON report path; the CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Average accuracy per view instead of over the merged cloud.
    #[arg(long)]
    pub per_view_accmean: bool,
}

fn eval(a: &EvalArgs) -> CliResult<Value> {
    if a.out.extension().is_some_and(|e| e == "csv") {
        return Err(CliError::Validation("--out names the JSON report and must not end in .csv".into()));
    }
    let pred = find_samples(&a.pred)?;
    let gt = find_samples(&a.gt)?;
    let pred_ids: Vec<&String> = pred.iter().map(|(id, _)| id).collect();
    let gt_ids: Vec<&String> = gt.iter().map(|(id, _)| id).collect();
    if pred_ids != gt_ids {
        let missing: Vec<_> = gt_ids.iter().filter(|id| !pred_ids.contains(id)).collect();
        let extra: Vec<_> = pred_ids.iter().filter(|id| !gt_ids.contains(id)).collect();
        return Err(CliError::Validation(format!(
            "sample sets differ; missing predictions: {missing:?}; predictions without ground truth: {extra:?}"
        )));
    }
    if gt.is_empty() {
        return Err(CliError::Validation(format!("no samples found under {}", a.gt.display())));
    }
    let reports = pred
        .par_iter()
        .zip(gt.par_iter())
        .map(|((id, p), (_, g))| {
            let p = read_sample(p)?;
            let g = read_sample(g)?;
            evaluate_sample(&p.sample, &p.pointmaps, &g.sample, &g.pointmaps, a.per_view_accmean)
                .map_err(|e| CliError::from(e).context(id))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = aggregate(&reports)?;
    let ids: Vec<String> = gt.into_iter().map(|(id, _)| id).collect();
    let csv = write_report(&a.out, &report, &ids)?;
    let mut out = crate::report::json_value(&report, &ids);
    out["json"] = json!(a.out);
    out["csv"] = json!(csv);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlyEncoding {
    Ascii,
    Binary,
}

impl From<PlyEncoding> for PlyFormat {
    fn from(e: PlyEncoding) -> Self {
        match e {
            PlyEncoding::Ascii => PlyFormat::Ascii,
            PlyEncoding::Binary => PlyFormat::BinaryLittleEndian,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub sample: PathBuf,
    /// Leave out a modality (`uav`, `ground`) or one view by name (`uav1`).
    #[arg(long)]
    pub drop_view: Option<String>,
    /// Overlay point cloud: satellite surface plus camera markers.
    #[arg(long)]
    pub ply: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlyEncoding::Ascii)]
    pub ply_format: PlyEncoding,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocatedCamera {
    pub view: String,
    pub u: f64,
    pub v: f64,
    pub yaw_deg: f64,
    pub gt_u: f64,
    pub gt_v: f64,
    pub gt_yaw_deg: f64,
    pub pixel_err: f64,
    pub meter_err: f64,
    pub yaw_err: f64,
}

/// Views kept after `--drop-view`, in storage order.
pub fn kept_views(s: &LoadedSample, drop: Option<&str>) -> CliResult<Vec<usize>> {
    let n = s.sample.views.len();
    let Some(drop) = drop else {
        return Ok((0..n).collect());
    };
    let modality = drop.parse::<Modality>().ok();
    if modality == Some(Modality::Satellite) {
        return Err(CliError::Validation("satellite views cannot be dropped, they carry the tile".into()));
    }
    let keep: Vec<usize> = (0..n)
        .filter(|&i| match modality {
            Some(m) => s.sample.views[i].modality != m,
            None => s.meta.views[i].name != drop,
        })
        .collect();
    if keep.len() == n {
        let names: Vec<&str> = s.meta.views.iter().map(|v| v.name.as_str()).collect();
        return Err(CliError::Validation(format!("no view {drop:?} to drop; sample has {names:?}")));
    }
    if s.sample.views[keep[0]].modality != Modality::Satellite {
        return Err(CliError::Validation("no satellite view left".into()));
    }
    Ok(keep)
}

fn localize_cmd(a: &LocalizeArgs) -> CliResult<Value> {
    let s = read_sample(&a.sample)?;
    let corr = s
        .correspondences
        .as_ref()
        .ok_or_else(|| CliError::Validation(format!("{} has no correspondences", a.sample.display())))?;
    let keep = kept_views(&s, a.drop_view.as_deref())?;
    let cameras: Vec<ViewCamera> = keep.iter().map(|&i| s.sample.views[i].camera).collect();
    let maps: Vec<_> = keep.iter().map(|&i| s.pointmaps[i].clone()).collect();
    let loc = localize(&cameras, &maps, &corr.restrict(&keep), 0)?;

    let gt_tile = SatTile::from_view(&s.sample.views[keep[0]])?;
    let mpp = s.sample.meters_per_pixel_gt;
    let mut located = Vec::new();
    for c in &loc.cameras {
        let view = keep[c.view];
        let (gu, gv, gyaw) = camera_on_tile(&s.sample.views[view].pose, &gt_tile);
        let e = localization_eval((c.u, c.v, c.yaw_deg), (gu, gv, gyaw), mpp)?;
        located.push(LocatedCamera {
            view: s.meta.views[view].name.clone(),
            u: c.u,
            v: c.v,
            yaw_deg: c.yaw_deg,
            gt_u: gu,
            gt_v: gv,
            gt_yaw_deg: gyaw,
            pixel_err: e.meter_err / mpp,
            meter_err: e.meter_err,
            yaw_err: e.yaw_err,
        });
    }

    if let Some(path) = &a.ply {
        let tile_pose = nominal_tile_pose();
        let mut cloud = PointCloud::default();
        for p in maps[0].valid_points() {
            cloud.push(tile_pose.inverse_transform(&loc.similarities[0].apply(&p)), [160, 160, 160]);
        }
        for c in &loc.cameras {
            let pose: Pose = loc.similarities[c.view].camera_pose().compose(&tile_pose);
            let color = if s.sample.views[keep[c.view]].modality == Modality::Uav { [40, 90, 255] } else { [255, 40, 40] };
            add_marker(&mut cloud, &pose, 2.0 * loc.rho, color);
        }
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        write_ply(BufWriter::new(file), &cloud, a.ply_format.into()).map_err(|e| CliError::io(path, e))?;
    }

    Ok(json!({
        "sample": s.meta.sample_id,
        "views": keep.iter().map(|&i| &s.meta.views[i].name).collect::<Vec<_>>(),
        "rho": loc.rho,
        "cameras": located,
    }))
}

/// Camera center plus a short ray along the viewing direction.
fn add_marker(cloud: &mut PointCloud, pose: &Pose, length: f64, color: [u8; 3]) {
    let c = pose.center();
    let f = pose.forward();
    for k in 0..=10 {
        cloud.push(c + f * (length * k as f64 / 10.0), color);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    Count,
    Iou,
}

impl From<ScoreArg> for PairScore {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::Count => PairScore::Count,
            ScoreArg::Iou => PairScore::Iou,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    /// Scene directory; every sample below it contributes candidate views.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CELL_M)]
    pub cell: f64,
    #[arg(long, default_value_t = 1)]
    pub top: usize,
    #[arg(long, value_enum, default_value_t = ScoreArg::Count)]
    pub score: ScoreArg,
}

fn pair(a: &PairArgs) -> CliResult<Value> {
    let samples = find_samples(&a.scene)?;
    let mut clouds = Vec::new();
    let mut names: [Vec<String>; 3] = Default::default();
    for (id, dir) in &samples {
        let s = read_sample(dir)?;
        for (k, view) in s.sample.views.iter().enumerate() {
            // back to the scene frame shared by all samples of the scene
            let shift = Vector3::new(0.0, s.sample.world_shift_y, 0.0);
            let pts: Vec<_> = s.pointmaps[k].valid_points().map(|p| view.pose.inverse_transform(&p) - shift).collect();
            clouds.push((view.modality, pts));
            names[view.modality as usize].push(format!("{id}/{}", s.meta.views[k].name));
        }
    }
    let candidates = Candidates::from_clouds(&clouds, a.cell)?;
    let tuples = select_tuples(&candidates, a.top, a.score.into())?;
    let out: Vec<Value> = tuples
        .iter()
        .map(|t| {
            json!({
                "satellite": t.satellite.map(|i| &names[0][i]),
                "uav": t.uav.map(|i| &names[1][i]),
                "ground": t.ground.map(|i| &names[2][i]),
                "score": t.score,
            })
        })
        .collect();
    Ok(json!({ "candidates": clouds.len(), "tuples": out }))
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    /// Relative depth, raw little-endian float32.
    #[arg(long)]
    pub rel: PathBuf,
    /// Metric anchor depth, same layout; non-positive values are missing.
    #[arg(long)]
    pub anchor: PathBuf,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = DEFAULT_PCC_MIN)]
    pub pcc_min: f64,
    /// Where to write the fused depth when accepted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn fuse(a: &FuseArgs) -> CliResult<Value> {
    let n = a.height * a.width;
    let rel = DepthGrid::from_values(a.height, a.width, read_f32(&a.rel, n)?)?;
    let anchor = DepthGrid::from_values(a.height, a.width, read_f32(&a.anchor, n)?)?;
    let outcome = fuse_and_filter(&rel, &anchor, a.pcc_min)?;
    let (s, t, pcc, fused) = match &outcome {
        FusionOutcome::Accepted { fused, s, t, pcc } => (*s, *t, *pcc, Some(fused)),
        FusionOutcome::Rejected { s, t, pcc } => (*s, *t, *pcc, None),
    };
    let mut written = None;
    if let (Some(path), Some(fused)) = (&a.out, fused) {
        io::write_depth(path, fused)?;
        written = Some(path.clone());
    }
    Ok(json!({
        "s": s,
        "t": t,
        "pcc": pcc,
        "accepted": outcome.is_accepted(),
        "out": written,
    }))
}

#[derive(Debug, Clone, Args)]
pub struct LossesArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Gate the normal term off as during warm-up.
    #[arg(long)]
    pub warmup: bool,
}

/// Confidence file of a view, `conf_<view>.f32`, if the prediction has one.
fn read_conf(dir: &Path, name: &str, h: usize, w: usize) -> CliResult<ConfMap> {
    let path = dir.join(format!("conf_{name}.f32"));
    if path.is_file() {
        Ok(ConfMap::new(h, w, read_f32(&path, h * w)?)?)
    } else {
        Ok(ConfMap::constant(h, w, 1.0)?)
    }
}

fn losses(a: &LossesArgs) -> CliResult<Value> {
    let p = read_sample(&a.pred)?;
    let g = read_sample(&a.gt)?;
    if p.meta.views.iter().map(|v| (&v.name, v.modality)).ne(g.meta.views.iter().map(|v| (&v.name, v.modality))) {
        return Err(CliError::Validation("prediction and ground truth list different views".into()));
    }
    let n = g.pointmaps.len() as f64;
    let mut c = LossComponents::default();
    for (k, view) in p.meta.views.iter().enumerate() {
        let (pm, gm) = (&p.pointmaps[k], &g.pointmaps[k]);
        c.geo += loss_geo(pm, gm)?.0 / n;
        c.norm += loss_norm(pm, gm)? / n;
        c.conf += loss_conf(&read_conf(&a.pred, &view.name, pm.height, pm.width)?, pm, gm, DEFAULT_CONF_EPS)? / n;
    }
    let poses = |s: &LoadedSample| s.sample.views.iter().map(|v| v.pose).collect::<Vec<_>>();
    c.cam = loss_cam(&poses(&p), &poses(&g), DEFAULT_HUBER_DELTA)?.0;
    let weights = LossWeights::default();
    Ok(json!({
        "geo": c.geo,
        "norm": c.norm,
        "conf": c.conf,
        "cam": c.cam,
        "total": total_loss(&c, &weights, a.warmup),
        "warmup": a.warmup,
        "weights": weights,
    }))
}

#[derive(Debug, Clone, Args)]
pub struct SweepImageArgs {
    /// Full field of view of the virtual nadir camera, degrees.
    #[arg(long, default_value_t = 3.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub center_x: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub center_z: f64,
}

impl SweepImageArgs {
    fn config(&self) -> SweepConfig {
        SweepConfig {
            fov_deg: self.fov,
            size: self.size,
            center_x: self.center_x,
            center_z: self.center_z,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Target image, raw little-endian float32, size×size, NaN for misses.
    #[arg(long)]
    pub target: PathBuf,
    /// Scene directory holding `scene.json`, or the file itself.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub min: f64,
    #[arg(long)]
    pub max: f64,
    #[arg(long)]
    pub step: f64,
    #[command(flatten)]
    pub image: SweepImageArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepTargetArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub altitude: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub image: SweepImageArgs,
}

fn read_scene(path: &Path) -> CliResult<SceneSpec> {
    let file = if path.is_dir() { path.join(SCENE_FILE) } else { path.to_path_buf() };
    Ok(read_json::<SceneFile>(&file)?.spec)
}

/// `min, min + step, …` up to `max`, with `max` itself included when it is
/// within a millionth of a step of the grid.
pub fn sweep_candidates(min: f64, max: f64, step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0) || !(min > 0.0) || !(min <= max) || !max.is_finite() {
        return Err(CliError::Validation("need 0 < --min <= --max and --step > 0".into()));
    }
    let n = ((max - min) / step + 1e-6).floor() as usize;
    if n > 1_000_000 {
        return Err(CliError::Validation("sweep has more than a million candidates".into()));
    }
    Ok((0..=n).map(|k| min + step * k as f64).collect())
}

fn sweep(a: &SweepArgs) -> CliResult<Value> {
    let cfg = a.image.config();
    let scene = read_scene(&a.scene)?;
    let target = read_f32(&a.target, cfg.size * cfg.size)?;
    let candidates = sweep_candidates(a.min, a.max, a.step)?;
    let best = altitude_sweep(&target, &scene, &candidates, &cfg)?;
    Ok(json!({ "altitude": best, "candidates": candidates.len() }))
}

fn sweep_target(a: &SweepTargetArgs) -> CliResult<Value> {
    let cfg = a.image.config();
    let image = render_sweep_image(&read_scene(&a.scene)?, a.altitude, &cfg)?;
    write_f32(&a.out, image)?;
    Ok(json!({ "out": a.out, "size": cfg.size, "altitude": a.altitude }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Random,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Gaussian,
    Fixed,
}

#[derive(Debug, Clone, Args)]
pub struct PerturbArgs {
    /// A sample directory or a dataset root.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rotation noise, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub rot_deg: f64,
    #[arg(long, value_enum, default_value_t = AxisArg::Random)]
    pub rot_axis: AxisArg,
    /// Camera-center noise, meters.
    #[arg(long, default_value_t = 0.0)]
    pub trans_m: f64,
    /// Point noise, meters.
    #[arg(long, default_value_t = 0.0)]
    pub point_m: f64,
    /// Relative satellite scale noise.
    #[arg(long, default_value_t = 0.0)]
    pub rho_rel: f64,
    #[arg(long, value_enum, default_value_t = KindArg::Gaussian)]
    pub kind: KindArg,
    /// Comma-separated view names to corrupt (default: all).
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<String>>,
}

fn perturb_cmd(a: &PerturbArgs) -> CliResult<Value> {
    let samples = find_samples(&a.data)?;
    if samples.is_empty() {
        return Err(CliError::Validation(format!("no samples found under {}", a.data.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let jobs: Vec<_> = samples.into_iter().map(|(id, dir)| (id, dir, rng.next_u64())).collect();
    let written = jobs
        .par_iter()
        .map(|(id, dir, seed)| {
            let s = read_sample(dir)?;
            let views = match &a.views {
                None => None,
                Some(names) => Some(
                    names
                        .iter()
                        .map(|n| {
                            s.meta.views.iter().position(|v| &v.name == n).ok_or_else(|| {
                                CliError::Validation(format!("{id}: no view named {n:?}"))
                            })
                        })
                        .collect::<CliResult<Vec<_>>>()?,
                ),
            };
            let noise = Noise {
                rot_deg: a.rot_deg,
                rot_axis: match a.rot_axis {
                    AxisArg::Random => RotationAxis::Random,
                    AxisArg::Up => RotationAxis::Up,
                },
                trans_m: a.trans_m,
                point_m: a.point_m,
                rho_rel: a.rho_rel,
                kind: match a.kind {
                    KindArg::Gaussian => NoiseKind::Gaussian,
                    KindArg::Fixed => NoiseKind::Fixed,
                },
                views,
            };
            let (pred, injected) = perturb(&s.sample, &s.pointmaps, &noise, *seed)?;
            let out = if id == "." { a.out.clone() } else { a.out.join(id) };
            io::write_sample(
                &out,
                &SampleWrite {
                    sample_id: &s.meta.sample_id,
                    scene: s.meta.scene,
                    seed: s.meta.seed,
                    sample: &pred.sample,
                    pointmaps: pred.pointmaps.iter().map(Some).collect(),
                    correspondences: s.correspondences.as_ref(),
                },
            )?;
            let named: Vec<Value> = s
                .meta
                .views
                .iter()
                .zip(&injected)
                .map(|(v, e)| json!({ "view": v.name, "error": e }))
                .collect();
            write_json(&out.join(INJECTED_FILE), &named)?;
            Ok(id.clone())
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(json!({ "out": a.out, "samples": written }))
}

fn dispatch(command: &Command) -> CliResult<Value> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Pair(a) => pair(a),
        Command::Fuse(a) => fuse(a),
        Command::Losses(a) => losses(a),
        Command::Sweep(a) => sweep(a),
        Command::SweepTarget(a) => sweep_target(a),
        Command::Perturb(a) => perturb_cmd(a),
    }
}

/// Runs a parsed command line, on a dedicated pool when `--threads` is given.
pub fn run(cli: &Cli) -> CliResult<Value> {
    match cli.threads {
        Some(0) => Err(CliError::Validation("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Validation(e.to_string()))?
            .install(|| dispatch(&cli.command)),
        None => dispatch(&cli.command),
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use serde_json::Value;
use tempfile::TempDir;

use triview_cli::io::{find_samples, read_sample, validate_meta, write_loaded, SampleMeta};
use triview_cli::{run, Cli, CliError};
use triview_core::Modality;

const SMALL: [&str; 6] = ["--tile-px", "64", "--view-width", "48", "--view-height", "36"];

fn cli(args: &[&str]) -> Result<Value, CliError> {
    let cli = Cli::try_parse_from(std::iter::once("triview").chain(args.iter().copied())).expect("arguments parse");
    run(&cli)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, scenes: usize, samples: usize, seed: u64) -> PathBuf {
    let out = dir.join("gt");
    let (n, m, seed) = (scenes.to_string(), samples.to_string(), seed.to_string());
    let mut args = vec!["generate", "--scenes", &n, "--samples-per-scene", &m, "--seed", &seed, "--out", s(&out)];
    args.extend(SMALL);
    cli(&args).unwrap();
    out
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn schema() -> jsonschema::Validator {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/sample_meta.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn bin(args: &[&str]) -> (i32, String, String) {
    let out = Process::new(env!("CARGO_BIN_EXE_triview")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn single_sample_is_complete_and_schema_valid() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 1, 5);
    let samples = find_samples(&gt).unwrap();
    assert_eq!(samples.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>(), ["scene_0000/sample_000"]);
    let dir = &samples[0].1;
    let meta: Value = serde_json::from_slice(&fs::read(dir.join("meta.json")).unwrap()).unwrap();
    let v = schema();
    assert!(v.is_valid(&meta), "{:?}", v.iter_errors(&meta).map(|e| e.to_string()).collect::<Vec<_>>());
    let loaded = read_sample(dir).unwrap();
    for (view, m) in loaded.sample.views.iter().zip(&loaded.meta.views) {
        let (h, w) = view.camera.dims();
        assert_eq!(fs::metadata(dir.join(m.depth.as_ref().unwrap())).unwrap().len() as usize, h * w * 4);
        assert_eq!(fs::metadata(dir.join(m.pointmap.as_ref().unwrap())).unwrap().len() as usize, h * w * 12);
    }
    assert!(loaded.correspondences.is_some());
    assert!(gt.join("split.json").is_file() && gt.join("scene_0000/scene.json").is_file());
}

#[test]
fn write_read_write_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 1, 9);
    let dir = gt.join("scene_0000/sample_000");
    let once = tmp.path().join("once");
    let twice = tmp.path().join("twice");
    write_loaded(&once, &read_sample(&dir).unwrap()).unwrap();
    write_loaded(&twice, &read_sample(&once).unwrap()).unwrap();
    assert_eq!(tree_bytes(&dir), tree_bytes(&once));
    assert_eq!(tree_bytes(&once), tree_bytes(&twice));

    // without stored point maps the depth files alone carry the geometry
    let mut lifted = read_sample(&dir).unwrap();
    lifted.stored_pointmaps = vec![false; 6];
    let bare = tmp.path().join("bare");
    write_loaded(&bare, &lifted).unwrap();
    let again = tmp.path().join("again");
    write_loaded(&again, &read_sample(&bare).unwrap()).unwrap();
    assert_eq!(tree_bytes(&bare), tree_bytes(&again));
}

#[test]
fn modality_counts_other_than_two_each_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 1, 2);
    let text = fs::read_to_string(gt.join("scene_0000/sample_000/meta.json")).unwrap();
    let meta: SampleMeta = serde_json::from_str(&text).unwrap();
    validate_meta(&meta).unwrap();
    let v = schema();
    for (from, to) in [(Modality::Uav, Modality::Ground), (Modality::Satellite, Modality::Uav)] {
        let mut bad = meta.clone();
        let k = bad.views.iter().position(|x| x.modality == from).unwrap();
        bad.views[k].modality = to;
        assert!(matches!(validate_meta(&bad), Err(CliError::Validation(_))));
        assert!(!v.is_valid(&serde_json::to_value(&bad).unwrap()));
    }
    let mut short = meta.clone();
    short.views.pop();
    assert!(validate_meta(&short).is_err());
    assert!(!v.is_valid(&serde_json::to_value(&short).unwrap()));
}

#[test]
fn truncated_arrays_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 1, 3);
    let dir = gt.join("scene_0000/sample_000");
    let f = dir.join("depth_uav0.f32");
    let mut bytes = fs::read(&f).unwrap();
    bytes.pop();
    fs::write(&f, bytes).unwrap();
    assert!(matches!(read_sample(&dir), Err(CliError::Validation(_))));
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 2, 1, 4);
    let out = tmp.path().join("report.json");
    let v = cli(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&out)]).unwrap();
    let c = &v["columns"];
    assert_eq!(c["acc_mean"], 0.0);
    for key in ["delta_0.5m", "delta_1m", "delta_2m", "rra_5", "rra_15", "rra_25", "rta_5", "rta_15", "rta_25", "auc_30"] {
        assert_eq!(c[key], 1.0, "{key}");
    }
    for key in ["ground_meter_mean", "ground_meter_median", "ground_yaw_mean", "uav_meter_mean", "uav_yaw_median"] {
        assert_eq!(c[key], 0.0, "{key}");
    }
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 31);
    assert_eq!(header[..4], ["acc_mean", "delta_0.5m", "delta_1m", "delta_2m"]);
    assert_eq!(header[30], "ori_3deg");
}

#[test]
fn perturbed_camera_error_matches_the_injected_offset() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 2, 2, 11);
    let pred = tmp.path().join("pred");
    let args = ["perturb", "--data", s(&gt), "--out", s(&pred), "--trans-m", "1", "--views", "ground1", "--seed", "8"];
    cli(&args).unwrap();
    let mut oracle = Vec::new();
    for (id, _) in find_samples(&pred).unwrap() {
        let injected: Value = serde_json::from_slice(&fs::read(pred.join(&id).join("injected.json")).unwrap()).unwrap();
        let off = &injected[5]["error"]["center_offset"];
        oracle.push(off[0].as_f64().unwrap().hypot(off[2].as_f64().unwrap()));
        assert_eq!(injected[4]["error"]["center_offset"], serde_json::json!([0.0, 0.0, 0.0]));
    }
    let out = tmp.path().join("r.json");
    let v = cli(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&out)]).unwrap();
    // two ground cameras per sample, one of them untouched
    let expected = oracle.iter().sum::<f64>() / (2 * oracle.len()) as f64;
    let got = v["columns"]["ground_meter_mean"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
}

#[test]
fn localize_reproduces_ground_truth_and_writes_overlay() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 1, 6);
    let dir = gt.join("scene_0000/sample_000");
    let ply = tmp.path().join("overlay.ply");
    let v = cli(&["localize", "--sample", s(&dir), "--ply", s(&ply)]).unwrap();
    let cams = v["cameras"].as_array().unwrap();
    assert_eq!(cams.len(), 4);
    for c in cams {
        assert!(c["pixel_err"].as_f64().unwrap() < 0.5 && c["yaw_err"].as_f64().unwrap() < 0.01, "{c}");
    }
    let cloud = triview_cli::ply::read_ply(std::io::BufReader::new(fs::File::open(&ply).unwrap())).unwrap();
    assert_eq!(cloud.points.len(), cloud.colors.len());
    assert!(cloud.points.len() > 4 * 11);

    let v = cli(&["localize", "--sample", s(&dir), "--drop-view", "uav"]).unwrap();
    let names: Vec<&str> = v["cameras"].as_array().unwrap().iter().map(|c| c["view"].as_str().unwrap()).collect();
    assert_eq!(names, ["ground0", "ground1"]);
    assert!(matches!(cli(&["localize", "--sample", s(&dir), "--drop-view", "uav7"]), Err(CliError::Validation(_))));
}

fn write_f32(path: &Path, values: &[f32]) {
    fs::write(path, values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>()).unwrap();
}

#[test]
fn fuse_recovers_an_exact_affine_pair() {
    let tmp = TempDir::new().unwrap();
    let rel: Vec<f32> = (0..48).map(|i| 1.0 + (i % 7) as f32 * 0.25 + (i / 7) as f32 * 0.5).collect();
    let anchor: Vec<f32> = rel.iter().map(|r| 2.0 * r + 3.0).collect();
    let (rp, ap, out) = (tmp.path().join("rel.f32"), tmp.path().join("anchor.f32"), tmp.path().join("fused.f32"));
    write_f32(&rp, &rel);
    write_f32(&ap, &anchor);
    let v = cli(&["fuse", "--rel", s(&rp), "--anchor", s(&ap), "--height", "6", "--width", "8", "--out", s(&out)]).unwrap();
    assert!((v["s"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!((v["t"].as_f64().unwrap() - 3.0).abs() < 1e-9);
    assert!((v["pcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["accepted"], true);
    assert_eq!(fs::metadata(&out).unwrap().len(), 48 * 4);
}

#[test]
fn losses_vanish_on_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 1, 12);
    let dir = gt.join("scene_0000/sample_000");
    let v = cli(&["losses", "--pred", s(&dir), "--gt", s(&dir)]).unwrap();
    assert_eq!(v["geo"], 0.0);
    assert_eq!(v["norm"], 0.0);
    assert_eq!(v["cam"], 0.0);
    // the confidence term bottoms out at the clamp: −ln(1 − 1e-7)
    let conf = v["conf"].as_f64().unwrap();
    assert!(conf > 0.0 && conf < 1.1e-7);
}

#[test]
fn sweep_finds_the_rendering_altitude() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 1, 13);
    let scene = gt.join("scene_0000");
    let target = tmp.path().join("target.f32");
    cli(&["sweep-target", "--scene", s(&scene), "--altitude", "140", "--out", s(&target)]).unwrap();
    let v = cli(&["sweep", "--target", s(&target), "--scene", s(&scene), "--min", "100", "--max", "200", "--step", "20"]).unwrap();
    assert_eq!(v["altitude"], 140.0);
    assert_eq!(v["candidates"], 6);
}

#[test]
fn pair_picks_tuples_across_samples_of_a_scene() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 2, 14);
    let v = cli(&["pair", "--scene", s(&gt.join("scene_0000")), "--top", "3"]).unwrap();
    assert_eq!(v["candidates"], 12);
    let tuples = v["tuples"].as_array().unwrap();
    assert_eq!(tuples.len(), 3);
    let scores: Vec<f64> = tuples.iter().map(|t| t["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn generated_split_partitions_scenes() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 20, 1, 15);
    let split: Value = serde_json::from_slice(&fs::read(gt.join("split.json")).unwrap()).unwrap();
    let ids = |k: &str| split[k].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect::<Vec<_>>();
    assert_eq!((ids("train").len(), ids("val").len(), ids("test").len()), (18, 1, 1));
    let mut all: Vec<u64> = ids("train").into_iter().chain(ids("val")).chain(ids("test")).collect();
    all.sort_unstable();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(tmp.path(), 1, 2, 16);
    let missing = tmp.path().join("nowhere");
    let (code, _, err) = bin(&["localize", "--sample", s(&missing)]);
    assert_eq!(code, 4, "{err}");

    // mismatched sample sets list the offending ids
    let partial = tmp.path().join("partial");
    fs::create_dir_all(&partial).unwrap();
    write_loaded(&partial.join("scene_0000/sample_000"), &read_sample(&gt.join("scene_0000/sample_000")).unwrap()).unwrap();
    let out = tmp.path().join("r.json");
    let (code, _, err) = bin(&["eval", "--pred", s(&partial), "--gt", s(&gt), "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("scene_0000/sample_001"), "{err}");

    // constant relative depth leaves nothing to fit
    let (rp, ap) = (tmp.path().join("rel.f32"), tmp.path().join("anchor.f32"));
    write_f32(&rp, &[1.0; 12]);
    write_f32(&ap, &(0..12).map(|i| i as f32 + 1.0).collect::<Vec<_>>());
    let (code, _, err) = bin(&["fuse", "--rel", s(&rp), "--anchor", s(&ap), "--height", "3", "--width", "4"]);
    assert_eq!(code, 3, "{err}");

    let (code, stdout, _) = bin(&["sweep-target", "--scene", s(&gt.join("scene_0000")), "--altitude", "150", "--out", s(&tmp.path().join("t.f32"))]);
    assert_eq!(code, 0);
    assert_eq!(serde_json::from_str::<Value>(&stdout).unwrap()["altitude"], 150.0);
    let (code, _, _) = bin(&["generate", "--scenes", "1", "--samples-per-scene", "1", "--seed", "1", "--out", s(&tmp.path().join("x")), "--uav-alt", "50:10"]);
    assert_eq!(code, 2);
}

#[test]
fn generation_and_evaluation_are_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ga = generate(a.path(), 2, 2, 21);
    let gb = generate(b.path(), 2, 2, 21);
    assert_eq!(tree_bytes(&ga), tree_bytes(&gb));
    let pred = a.path().join("pred");
    cli(&["perturb", "--data", s(&ga), "--out", s(&pred), "--rot-deg", "2", "--point-m", "0.2", "--seed", "1"]).unwrap();
    let r1 = a.path().join("r1.json");
    let r4 = a.path().join("r4.json");
    cli(&["--threads", "1", "eval", "--pred", s(&pred), "--gt", s(&ga), "--out", s(&r1)]).unwrap();
    cli(&["--threads", "4", "eval", "--pred", s(&pred), "--gt", s(&ga), "--out", s(&r4)]).unwrap();
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r4).unwrap());
    assert_eq!(fs::read(r1.with_extension("csv")).unwrap(), fs::read(r4.with_extension("csv")).unwrap());
}

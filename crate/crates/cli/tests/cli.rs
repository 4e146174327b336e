use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use peel3d::raster::{save_mask, Mask};
use serde_json::Value;

fn peel3d(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peel3d"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn peel3d")
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = peel3d(cwd, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(peel3d(tmp.path(), &[]).status.code(), Some(2));
    assert_eq!(peel3d(tmp.path(), &["reconstruct"]).status.code(), Some(2));
    let bad = peel3d(tmp.path(), &["run", "--scene", ".", "--backend", "magic", "--out", "o"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("magic"));
    assert_eq!(peel3d(tmp.path(), &["synth", "--out", "s", "--objects", "many"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = peel3d(tmp.path(), &["run", "--scene", "nowhere", "--backend", "fixture", "--out", "o"]);
    assert_eq!(missing.status.code(), Some(1));
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "1"]);
    let adapter = peel3d(tmp.path(), &["run", "--scene", "s", "--backend", "adapter", "--out", "o"]);
    assert_eq!(adapter.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&adapter.stderr).contains("adapters"));
}

#[test]
fn empty_scene_has_a_single_layer() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "0", "--seed", "4"]);
    let s = tmp.path().join("s");
    assert!(s.join("layer_000.png").is_file());
    assert!(!s.join("layer_001.png").exists());
    assert!(!s.join("mask_000.png").exists());
    assert_eq!(json(s.join("ground_truth/layout.json"))["objects"].as_array().unwrap().len(), 0);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["synth", "--out", "s", "--objects", "3", "--shapes", "box,sphere", "--seed", "11"];
    ok(a.path(), &args);
    ok(b.path(), &args);
    let (ta, tb) = (tree(&a.path().join("s")), tree(&b.path().join("s")));
    assert!(ta.len() > 10);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(*v == tb[k], "{} differs", k.display());
    }
    let manifest = json(a.path().join("s/manifest.json"));
    assert_eq!(manifest["subcommand"], "synth");
    assert_eq!(manifest["seed"], 11);
}

#[test]
fn crowded_scene_reports_placement_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = peel3d(tmp.path(), &["synth", "--out", "s", "--objects", "50"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("placement failed after 200 retries"), "{err}");
}

#[test]
fn seeded_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "3", "--seed", "2"]);
    ok(tmp.path(), &["run", "--scene", "s", "--backend", "oracle", "--out", "r1"]);
    ok(tmp.path(), &["run", "--scene", "s", "--backend", "oracle", "--out", "r2"]);
    for file in ["layout.json", "report.json"] {
        let a = std::fs::read(tmp.path().join("r1").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("r2").join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
    let manifest = json(tmp.path().join("r1/manifest.json"));
    assert_eq!(manifest["subcommand"], "run");
    assert_eq!(manifest["config"]["backend"], "oracle");
    assert_eq!(manifest["config"]["depth_align"], true);
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["versions"]["peel3d"], env!("CARGO_PKG_VERSION"));

    ok(tmp.path(), &["evaluate", "--pred", "r1", "--gt", "s/ground_truth", "--out", "e"]);
    let report = json(tmp.path().join("e/report.json"));
    assert!(report["object_fscore"].as_f64().unwrap() > 95.0, "{report}");
}

#[test]
fn ablation_flags_reach_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "2", "--seed", "5"]);
    ok(tmp.path(), &["run", "--scene", "s", "--backend", "oracle", "--out", "r", "--no-depth-align", "--no-filter"]);
    let report = json(tmp.path().join("r/report.json"));
    assert_eq!(report["reconstruct"]["depth_aligned"], false);
    assert_eq!(report["config"]["filter"], false);
    assert!(tmp.path().join("r/layers/layer_000.png").is_file());
}

#[test]
fn config_file_is_read() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "2", "--seed", "6"]);
    std::fs::write(tmp.path().join("cfg.json"), r#"{"max_iterations": 1, "oracle": {"seed": 9}}"#).unwrap();
    ok(tmp.path(), &["run", "--scene", "s", "--backend", "oracle", "--config", "cfg.json", "--out", "r"]);
    let layout = json(tmp.path().join("r/layout.json"));
    assert_eq!(layout["objects"].as_array().unwrap().len(), 1);
    assert_eq!(json(tmp.path().join("r/manifest.json"))["seed"], 9);
    std::fs::write(tmp.path().join("bad.json"), r#"{"filter_threshold": 2.0}"#).unwrap();
    let bad = peel3d(tmp.path(), &["run", "--scene", "s", "--backend", "oracle", "--config", "bad.json", "--out", "q"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn fixture_backend_replays_a_synth_directory() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "2", "--seed", "3"]);
    ok(tmp.path(), &["run", "--scene", "s", "--backend", "fixture", "--out", "r"]);
    ok(tmp.path(), &["evaluate", "--pred", "r", "--gt", "s/ground_truth", "--out", "e", "--samples", "2000"]);
    let report = json(tmp.path().join("e/report.json"));
    assert!(report["object_fscore"].as_f64().unwrap() > 95.0, "{report}");
    assert_eq!(report["config"]["samples_per_object"], 2000);
}

#[test]
fn evaluating_a_layout_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "3", "--seed", "8"]);
    ok(tmp.path(), &["evaluate", "--pred", "s/ground_truth", "--gt", "s/ground_truth", "--out", "e"]);
    let report = json(tmp.path().join("e/report.json"));
    assert_eq!(report["f1"], 100.0);
    assert_eq!(report["chamfer"], 0.0);
    assert_eq!(report["object_fscore"], 100.0);
    assert_eq!(json(tmp.path().join("e/manifest.json"))["subcommand"], "evaluate");
}

#[test]
fn tiny_mask_is_unfittable() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "1", "--seed", "1"]);
    let s = tmp.path().join("s");
    let full = peel3d::raster::load_mask(s.join("mask_000.png")).unwrap();
    let mut tiny = Mask::empty(full.width(), full.height());
    let mut set = 0;
    for y in 0..full.height() {
        for x in 0..full.width() {
            if full.get(x, y) && set < 2 {
                tiny.set(x, y, true);
                set += 1;
            }
        }
    }
    save_mask(&tiny, tmp.path().join("tiny.png")).unwrap();
    let args = |mask: &'static str, out: &'static str| {
        [
            "fit", "--image", "s/layer_000.png", "--mask", mask, "--disparity", "s/disp_000.pfm", "--mesh",
            "s/mesh_000.obj", "--camera", "s/camera.json", "--out", out,
        ]
    };
    let out = peel3d(tmp.path(), &args("tiny.png", "f"));
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unfittable"));
    assert!(!tmp.path().join("f/fit.json").exists());

    ok(tmp.path(), &args("s/mask_000.png", "g"));
    let fit = json(tmp.path().join("g/fit.json"));
    assert_eq!(fit["diagnostics"]["branch"], "icp");
    assert_eq!(fit["transform"].as_array().unwrap().len(), 4);
}

#[test]
fn fit_uses_supplied_tracks() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "1", "--seed", "1"]);
    ok(
        tmp.path(),
        &[
            "fit", "--image", "s/layer_000.png", "--mask", "s/mask_000.png", "--disparity", "s/disp_000.pfm",
            "--mesh", "s/mesh_000.obj", "--camera", "s/camera.json", "--tracks", "s/tracks_000.json", "--out", "f",
        ],
    );
    let fit = json(tmp.path().join("f/fit.json"));
    assert_eq!(fit["diagnostics"]["branch"], "least_squares");
}

#[test]
fn refine_depth_collapses_an_affine_layer_pair() {
    let tmp = tempfile::tempdir().unwrap();
    // one object: a clean reference layer plus one affinely corrupted layer
    ok(tmp.path(), &["synth", "--out", "s", "--objects", "1", "--seed", "7"]);
    ok(tmp.path(), &["refine-depth", "--layers", "s", "--out", "d"]);
    let sidecar = json(tmp.path().join("d/refine.json"));
    assert_eq!(sidecar["layers"], 2);
    let (initial, last) = (sidecar["initial_loss"].as_f64().unwrap(), sidecar["final_loss"].as_f64().unwrap());
    assert!(initial > 0.0);
    assert!(last <= 0.01 * initial, "final {last} vs initial {initial}");
    assert!(tmp.path().join("d/refined_001.pfm").is_file());
}

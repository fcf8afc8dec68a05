use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pvmap::io;

fn pvmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvmap")).args(args).output().expect("spawn pvmap")
}

fn ok(args: &[&str]) {
    let out = pvmap(args);
    assert!(out.status.success(), "pvmap {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn simulate(preset: &str, seed: u64, dir: &Path) {
    ok(&["simulate", "--preset", preset, "--seed", &seed.to_string(), "--out", dir.to_str().unwrap()]);
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn truth_line(dir: &Path, name: &str) -> String {
    let stats = fs::read_to_string(dir.join("out/stats.csv")).unwrap();
    let line = stats.lines().find(|l| l.starts_with(name)).unwrap_or_else(|| panic!("no {name} in stats.csv"));
    line.rsplit(',').next().unwrap().to_string()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate("pp1-desk", 7, &a);
    simulate("pp1-desk", 7, &b);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key("pp1-desk.cfg") && ta.contains_key("truth.json"));
    assert_eq!(ta.len(), tb.len());
    for (name, bytes) in &ta {
        assert!(tb.get(name) == Some(bytes), "{name} differs");
    }
}

#[test]
fn run_recovers_every_module_of_pp2_desk() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate("pp2-desk", 0, dir);
    ok(&["--config", dir.join("pp2-desk.cfg").to_str().unwrap(), "run"]);
    assert_eq!(truth_line(dir, "truth_recall"), "1.0");
    assert_eq!(truth_line(dir, "truth_tuple_accuracy"), "1.0");
    assert_eq!(truth_line(dir, "truth_spurious"), "0");
    let model = io::load_model(&dir.join("out/model.json")).unwrap();
    assert!(model.modules.len() >= 600);
    assert!(dir.join("out/model.geojson").is_file());
    assert!(dir.join("out/overlays").read_dir().unwrap().count() > 0);
}

#[test]
fn stages_reproduce_run_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate("paper-noise", 2, dir);
    let cfg = dir.join("paper-noise.cfg");
    let cfg = cfg.to_str().unwrap();
    ok(&["--config", cfg, "--keep-intermediates", "run"]);
    let run = tree(&dir.join("out"));
    fs::remove_dir_all(dir.join("out")).unwrap();
    for stage in ["fuse-detections", "infer", "lift", "match", "optimize", "evaluate", "render-overlay"] {
        ok(&["--config", cfg, stage]);
    }
    let staged = tree(&dir.join("out"));
    assert_eq!(run.len(), staged.len());
    for name in ["fused.json", "structures.json", "lifted.json", "matched.json", "global.json", "model.json", "raw_poses.json", "model.geojson", "eval.json", "stats.csv"] {
        assert!(run[name] == staged[name], "{name} differs between run and stages");
    }
}

#[test]
fn repeated_runs_write_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate("paper-noise", 5, dir);
    let cfg = dir.join("paper-noise.cfg");
    ok(&["--config", cfg.to_str().unwrap(), "run"]);
    let first = tree(&dir.join("out"));
    ok(&["--config", cfg.to_str().unwrap(), "run"]);
    assert_eq!(first, tree(&dir.join("out")));
}

#[test]
fn missing_cameras_is_an_input_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate("pp2-desk", 0, dir);
    fs::remove_file(dir.join("cameras.json")).unwrap();
    let out = pvmap(&["--config", dir.join("pp2-desk.cfg").to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cameras.json"));
    assert!(!dir.join("out").exists());
}

#[test]
fn bad_config_and_preset_are_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "structure.rows_per_bench = 6\nlift.knn_k = 0\n").unwrap();
    assert_eq!(pvmap(&["--config", cfg.to_str().unwrap(), "run"]).status.code(), Some(1));
    fs::write(&cfg, "structure.rows_per_bench = 6\nlift.no_such_key = 1\n").unwrap();
    assert_eq!(pvmap(&["--config", cfg.to_str().unwrap(), "run"]).status.code(), Some(1));
    let out = tmp.path().join("x");
    assert_eq!(pvmap(&["simulate", "--preset", "nope", "--out", out.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn stage_without_its_input_names_the_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate("pp2-desk", 0, dir);
    let out = pvmap(&["--config", dir.join("pp2-desk.cfg").to_str().unwrap(), "lift"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infer"));
}

#[test]
fn strict_clean_scene_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate("pp2-desk", 1, dir);
    ok(&["--config", dir.join("pp2-desk.cfg").to_str().unwrap(), "--strict", "run"]);
}

#[test]
fn exported_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate("paper-noise", 3, dir);

    let cloud = io::load_point_cloud(&dir.join("cloud.txt")).unwrap();
    io::write_point_cloud(&dir.join("cloud2.txt"), &cloud).unwrap();
    assert_eq!(fs::read(dir.join("cloud.txt")).unwrap(), fs::read(dir.join("cloud2.txt")).unwrap());
    let again = io::load_point_cloud(&dir.join("cloud2.txt")).unwrap();
    for (a, b) in cloud.points().iter().zip(again.points()) {
        assert_eq!(a.position.x.to_bits(), b.position.x.to_bits());
        assert_eq!(a.position.z.to_bits(), b.position.z.to_bits());
    }

    let dets = io::load_detections(&dir.join("detections.json")).unwrap();
    io::write_detections(&dir.join("d2.json"), &dets).unwrap();
    assert_eq!(dets, io::load_detections(&dir.join("d2.json")).unwrap());

    let frames = io::load_camera_frames(&dir.join("cameras.json")).unwrap();
    io::write_camera_frames(&dir.join("c2.json"), &frames).unwrap();
    assert_eq!(frames, io::load_camera_frames(&dir.join("c2.json")).unwrap());

    ok(&["--config", dir.join("paper-noise.cfg").to_str().unwrap(), "run"]);
    let model = io::load_model(&dir.join("out/model.json")).unwrap();
    io::write_json(&dir.join("m2.json"), &model).unwrap();
    assert_eq!(fs::read(dir.join("out/model.json")).unwrap(), fs::read(dir.join("m2.json")).unwrap());
}

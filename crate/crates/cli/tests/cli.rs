use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fgseg::dataset::scene::{gt_name, mask_name, GT_DIR};
use fgseg::dataset::{load_pixmap, save_pixmap, Pixmap};
use fgseg::metrics::{accumulate, aggregate, ConfusionCounts, Metrics, VideoCounts};
use fgseg::Rng;
use serde_json::Value;

fn fgseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgseg")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", path(dir)];
    args.extend_from_slice(extra);
    let out = fgseg(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

/// Copies the scene's ground truth into masks (255 stays 255, else 0).
fn perfect_masks(scene: &Path, pred: &Path, invert: bool) {
    fs::create_dir_all(pred).unwrap();
    for entry in fs::read_dir(scene.join(GT_DIR)).unwrap() {
        let p = entry.unwrap().path();
        let id: u32 = p.file_stem().unwrap().to_str().unwrap()[2..].parse().unwrap();
        let g = load_pixmap(&p).unwrap();
        let data = g.data.iter().map(|&v| if (v == 255) != invert { 255 } else { 0 }).collect();
        save_pixmap(&Pixmap::gray(g.width, g.height, data).unwrap(), &pred.join(mask_name(id))).unwrap();
    }
}

#[test]
fn help_lists_threshold_default() {
    let out = fgseg(&["predict", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("--threshold") && text.contains("0.9"), "{text}");
    let out = fgseg(&["train", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--lr", "1e-4", "--max-epochs", "100", "--lr-patience", "--stop-patience", "--seed"] {
        assert!(text.contains(flag), "{flag} missing from train help");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&fgseg(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&fgseg(&[])), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"learning_rate": 1}}"#).unwrap();
    let out = fgseg(&["train", "--config", path(&cfg), "--scene", "synth", "--out", path(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
    let out = fgseg(&["train", "--scene", "synth", "--out", path(&dir.path().join("o")), "--val-fraction", "1.5"]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("o").exists(), "invalid config must not create outputs");
}

#[test]
fn dry_run_prints_merged_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"model": {"width_mult": 0.125}, "train": {"max_epochs": 7}}"#).unwrap();
    let out = fgseg(&["train", "--config", path(&cfg), "--lr", "0.001", "--dry-run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["model"]["width_mult"], 0.125);
    assert_eq!(v["train"]["max_epochs"], 7);
    assert_eq!(v["train"]["lr0"], 0.001);
    assert_eq!(v["train"]["lr_patience"], 5);
}

#[test]
fn missing_gt_dir_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, &["--frames", "4"]);
    fs::remove_dir_all(scene.join(GT_DIR)).unwrap();
    let out = fgseg(&["train", "--scene", path(&scene), "--out", path(&dir.path().join("run"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(path(&scene)), "{}", stderr(&out));
}

#[test]
fn synth_defaults_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth(&a, &["--seed", "3"]);
    synth(&b, &["--seed", "3"]);
    let ids = fgseg::dataset::numbered_files(&a.join("input"), "in", "ppm").unwrap();
    assert_eq!(ids, (1..=40).collect::<Vec<_>>());
    for id in [1, 17, 40] {
        let g = load_pixmap(&a.join(GT_DIR).join(gt_name(id))).unwrap();
        assert_eq!((g.width, g.height), (64, 64));
        assert_eq!(g.data.iter().filter(|&&v| v == 255).count(), 16 * 16);
        let rel = format!("input/in{id:06}.ppm");
        assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap());
    }
}

#[test]
fn eval_perfect_and_inverted() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    // a 32-pixel square in a 32x64 frame covers exactly half of it
    synth(&scene, &["--frames", "3", "--width", "64", "--height", "32", "--square", "32"]);
    let pred = dir.path().join("pred");
    perfect_masks(&scene, &pred, false);
    let out = fgseg(&["eval", "--pred", path(&pred), "--scene", path(&scene)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["overall_by_video"]["fmeasure"], 1.0);
    assert_eq!(v["overall_by_video"]["pwc"], 0.0);

    let inv = dir.path().join("inv");
    perfect_masks(&scene, &inv, true);
    let out = fgseg(&["eval", "--pred", path(&inv), "--scene", path(&scene), "--per-frame"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["videos"][0]["fmeasure"], 0.0);
    assert_eq!(v["videos"][0]["pwc"], 100.0);
    assert_eq!(v["videos"][0]["frames"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_matches_library_on_random_masks() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(11);
    let labels = [0u8, 50, 85, 170, 255];
    let mut entries = Vec::new();
    let mut expected = Vec::new();
    for (k, (cat, vid)) in [("a", "v1"), ("a", "v2"), ("b", "v3")].iter().enumerate() {
        let scene = dir.path().join(format!("s{k}"));
        let pred = dir.path().join(format!("p{k}"));
        fs::create_dir_all(scene.join("input")).unwrap();
        fs::create_dir_all(scene.join(GT_DIR)).unwrap();
        fs::create_dir_all(&pred).unwrap();
        let mut counts = ConfusionCounts::default();
        for id in 1..=3u32 {
            let g: Vec<u8> = (0..80).map(|_| labels[rng.below(5) as usize]).collect();
            let m: Vec<bool> = (0..80).map(|_| rng.bernoulli(0.4)).collect();
            save_pixmap(&Pixmap::rgb(10, 8, vec![0; 240]).unwrap(), &scene.join(format!("input/in{id:06}.ppm"))).unwrap();
            save_pixmap(&Pixmap::gray(10, 8, g.clone()).unwrap(), &scene.join(GT_DIR).join(gt_name(id))).unwrap();
            let mp = Pixmap::gray(10, 8, m.iter().map(|&b| if b { 255 } else { 0 }).collect()).unwrap();
            save_pixmap(&mp, &pred.join(mask_name(id))).unwrap();
            counts += accumulate(&m, &g, None, 10).unwrap().counts;
        }
        entries.push(serde_json::json!({"category": cat, "video": vid, "pred": pred, "scene": scene}));
        expected.push(VideoCounts { category: cat.to_string(), video: vid.to_string(), counts, frames: vec![] });
    }
    let list = dir.path().join("list.json");
    fs::write(&list, serde_json::to_string(&entries).unwrap()).unwrap();
    let report_path = dir.path().join("report.json");
    let out = fgseg(&["eval", "--list", path(&list), "--out", path(&report_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let got: fgseg::metrics::MetricReport = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let want = aggregate(expected).unwrap();
    assert_eq!(got, want);
    assert_eq!(got.categories.len(), 2);
    let _: Metrics = got.overall_by_category;
}

#[test]
fn eval_unpaired_frames_fail() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, &["--frames", "3"]);
    let pred = dir.path().join("pred");
    perfect_masks(&scene, &pred, false);
    fs::remove_file(pred.join(mask_name(2))).unwrap();
    let out = fgseg(&["eval", "--pred", path(&pred), "--scene", path(&scene)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(&mask_name(2)), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let out = fgseg(&["gradcheck", "--seeds", "1", "--width-mult", "0.0625", "--size", "8"]);
    assert_eq!(code(&out), 0, "{}\n{}", String::from_utf8_lossy(&out.stdout), stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("dilation 16"), "{text}");
    assert!(!text.contains("FAIL"));
    let out = fgseg(&["gradcheck", "--negative-control"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

fn train_small(dir: &Path, name: &str) -> std::path::PathBuf {
    let run = dir.join(name);
    let out = fgseg(&[
        "train", "--scene", "synth", "--out", path(&run), "--width-mult", "0.0625", "--max-epochs", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    run
}

#[test]
fn train_writes_artifacts_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"synth": {"frames": 6, "width": 32, "height": 32, "square": 8}}"#).unwrap();
    let run = |name: &str| {
        let run = dir.path().join(name);
        let out = fgseg(&[
            "train", "--config", path(&cfg), "--scene", "synth", "--out", path(&run), "--width-mult", "0.0625",
            "--max-epochs", "3",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        run
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["model.fgs2", "train_log.jsonl", "manifest.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "train_loss", "val_loss", "lr", "action"] {
        assert!(first.get(key).is_some(), "{key} missing from log record");
    }
    assert_eq!(log, fs::read_to_string(b.join("train_log.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("model.fgs2")).unwrap(), fs::read(b.join("model.fgs2")).unwrap());

    let m: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config"]["train"]["max_epochs"], 3);
    assert_eq!(m["data"].as_array().unwrap().len(), 12);
    assert_eq!(m["weights"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["split"]["val"].as_array().unwrap().len(), 1);

    // replay from the recorded configuration
    let replay_cfg = dir.path().join("replay.json");
    let mut recorded = m["config"].clone();
    recorded["out"] = serde_json::json!(dir.path().join("c"));
    fs::write(&replay_cfg, recorded.to_string()).unwrap();
    let out = fgseg(&["train", "--config", path(&replay_cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(a.join("model.fgs2")).unwrap(), fs::read(dir.path().join("c/model.fgs2")).unwrap());
}

#[test]
fn predict_writes_masks_and_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "run");
    let scene = run.join("scene");
    let weights = run.join("model.fgs2");
    let pred = dir.path().join("pred");
    let out = fgseg(&[
        "predict", "--weights", path(&weights), "--scene", path(&scene), "--out", path(&pred), "--width-mult",
        "0.0625", "--prob",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for id in [1, 40] {
        let m = load_pixmap(&pred.join(mask_name(id))).unwrap();
        assert!(m.data.iter().all(|&v| v == 0 || v == 255));
        assert!(pred.join(format!("prob{id:06}.pgm")).is_file());
    }
    let out = fgseg(&["eval", "--pred", path(&pred), "--scene", path(&scene)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // weights built for another width do not fit
    let out = fgseg(&["predict", "--weights", path(&weights), "--scene", path(&scene), "--out", path(&pred)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn overfit_run_reproduces_training_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"model": {"width_mult": 0.125, "encoder_dropout_rate": 0.0}, "synth": {"frames": 25}}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = fgseg(&["train", "--config", path(&cfg), "--scene", "synth", "--out", path(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let pred = dir.path().join("pred");
    let weights = run.join("model.fgs2");
    let scene = run.join("scene");
    let out = fgseg(&[
        "predict", "--config", path(&cfg), "--weights", path(&weights), "--scene", path(&scene), "--out",
        path(&pred), "--threshold", "0.5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let train: Vec<u32> = serde_json::from_value(manifest["split"]["train"].clone()).unwrap();
    assert_eq!(train.len(), 20);
    let mut counts = ConfusionCounts::default();
    for id in train {
        let g = load_pixmap(&scene.join(GT_DIR).join(gt_name(id))).unwrap();
        let m = load_pixmap(&pred.join(mask_name(id))).unwrap();
        let mask: Vec<bool> = m.data.iter().map(|&v| v == 255).collect();
        counts += accumulate(&mask, &g.data, None, g.width).unwrap().counts;
    }
    let f = fgseg::metrics::f_measure(&counts);
    assert!(f >= 0.95, "F {f} on training frames ({counts:?})");
}

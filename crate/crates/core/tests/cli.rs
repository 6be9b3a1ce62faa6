use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dri-iqa"));
    c.env_remove("DRI_IQA_CACHE").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const STAGE1: &str = "dim: 32\ncrop: 32\nbatch: 3\nepochs: 1\npredictor_width: 32\nheads: 2\ndepth: 1\nn_crops: 2\n";
const STAGE2: &str = "dim: 32\ncrop: 32\nbatch: 4\nepochs: 1\npredictor_width: 32\nheads: 2\ndepth: 1\nn_crops: 2\n";

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["predict", "--help"], &["synth", "--help"], &["--version"]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn unknown_subcommand_exits_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_required_flag_is_named() {
    let out = run(&["eval", "--checkpoint", "x.ckpt", "--report", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--manifest"), "{}", stderr(&out));
}

#[test]
fn bad_config_values_exit_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in [("batch: 0\n", "batch"), ("learning_rate: 1\n", "learning_rate"), ("tau: hot\n", "tau")] {
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, text).unwrap();
        let out = run(&["pretrain", "--config", p(&cfg), "--corpus", p(dir.path()), "--out", p(&dir.path().join("o"))]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        let err = stderr(&out);
        assert!(err.contains(key), "{text}: {err}");
        assert_eq!(err.trim().lines().count(), 1, "{err}");
    }
}

#[test]
fn unreadable_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    dri_iqa::toy::clean_image(1, 40, 40).save(&img).unwrap();
    let fake = dir.path().join("fake.ckpt");
    std::fs::write(&fake, b"not a checkpoint").unwrap();
    for ck in [fake.as_path(), dir.path().join("missing.ckpt").as_path()] {
        let out = run(&["predict", "--checkpoint", p(ck), "--image", p(&img)]);
        assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    }
}

#[test]
fn toy_pipeline_end_to_end_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = |name: &str| {
        let out = d.join(name);
        ok(&["synth", "--toy", "6", "--toy-size", "48", "--seed", "3", "--pairs-per-image", "2", "--output-dir", p(&out)]);
        out
    };
    let a = synth("a");
    let b = synth("b");
    for f in ["manifest.csv", "provenance.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = std::fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 12);
    let prov = std::fs::read_to_string(a.join("provenance.jsonl")).unwrap();
    for line in prov.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let mos = v["mos"].as_f64().unwrap();
        assert!((1.0..=5.0).contains(&mos));
        assert!(v["jpeg_codec"].is_string() && v["steps"].is_array());
    }
    assert!(a.join("run_manifest.json").exists());

    let c1 = d.join("stage1.txt");
    let c2 = d.join("stage2.txt");
    std::fs::write(&c1, STAGE1).unwrap();
    std::fs::write(&c2, STAGE2).unwrap();
    let pre = |name: &str| {
        let out = d.join(name);
        ok(&["pretrain", "--config", p(&c1), "--corpus", p(&a.join("clean")), "--out", p(&out), "--seed", "1"]);
        out
    };
    let p1 = pre("pre1");
    let p2 = pre("pre2");
    assert_eq!(std::fs::read(p1.join("stage1.ckpt")).unwrap(), std::fs::read(p2.join("stage1.ckpt")).unwrap());
    assert_eq!(std::fs::read(p1.join("losses.csv")).unwrap(), std::fs::read(p2.join("losses.csv")).unwrap());
    let rm: serde_json::Value = serde_json::from_slice(&std::fs::read(p1.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(rm["subcommand"], "pretrain");
    assert_eq!(rm["seed"], 1);

    let tr = d.join("train");
    ok(&[
        "train", "--config", p(&c2), "--manifest", p(&a.join("manifest.csv")), "--stage1", p(&p1.join("stage1.ckpt")),
        "--out", p(&tr), "--ablation", "proposed",
    ]);
    let restoration: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tr.join("restoration.json")).unwrap()).unwrap();
    assert!(restoration["mse_restored"].as_f64().unwrap().is_finite());
    let ck = tr.join("stage2.ckpt");

    let img = a.join("images").join("clean_0000_00.png");
    let first = ok(&["predict", "--checkpoint", p(&ck), "--image", p(&img), "--crops", "3"]);
    let second = ok(&["predict", "--checkpoint", p(&ck), "--image", p(&img), "--crops", "3"]);
    assert_eq!(first, second);
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["per_crop_scores"].as_array().unwrap().len(), 3);

    // Cached prediction: the second call is served from the cache directory.
    let cache = d.join("cache");
    let cached = |args: &[&str]| {
        let out = bin().env("DRI_IQA_CACHE", &cache).args(args).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        String::from_utf8(out.stdout).unwrap()
    };
    let args = ["predict", "--checkpoint", p(&ck), "--image", p(&img), "--crops", "3"];
    assert_eq!(cached(&args), first);
    assert_eq!(std::fs::read_dir(cache.join("predict")).unwrap().count(), 1);
    assert_eq!(cached(&args), first);

    // An image smaller than the crop is a usage error.
    let tiny = d.join("tiny.png");
    dri_iqa::toy::clean_image(2, 16, 16).save(&tiny).unwrap();
    let out = run(&["predict", "--checkpoint", p(&ck), "--image", p(&tiny)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let report = d.join("eval").join("report.json");
    std::fs::create_dir_all(report.parent().unwrap()).unwrap();
    ok(&[
        "eval", "--manifest", p(&a.join("manifest.csv")), "--checkpoint", p(&ck), "--splits", "2", "--seeds", "0,1",
        "--report", p(&report),
    ]);
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["runs"].as_array().unwrap().len(), 4);
    let records = report.with_extension("records.csv");
    let rows = dri_iqa::cli::read_records(&records).unwrap();
    assert!(!rows.is_empty());

    let plot = d.join("eval").join("scatter.png");
    let out = ok(&["plot", "--records", p(&records), "--out", p(&plot), "--split", "0", "--seed", "0"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let ann = dri_iqa::eval::read_plot_annotation(&plot).unwrap();
    assert_eq!(v["srocc"].as_f64().unwrap(), ann.srocc);
}

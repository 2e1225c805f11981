use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use hfc_cli::RunManifest;
use hfc_core::datasets::DatasetManifest;

const MICRO: &str = r#"
[model]
variant = "full"
channels = [4, 8]
depth = 2
gpa_max_scale = 2

[train]
seed = 1
epochs = 2
batch_size = 4
learning_rate = 1e-3
"#;

const OVERFIT: &str = r#"
[model]
channels = [4, 8]
depth = 2
gpa_max_scale = 2

[train]
seed = 8
epochs = 200
batch_size = 8
learning_rate = 3e-3

[train.augment.probabilities]
rotation = 0.0
translation = 0.0
flip = 0.0
blur = 0.0
channel_shuffle = 0.0
"#;

fn hfcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfcnet"))
        .args(args)
        .env_remove("HFC_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn prepare_synth(dir: &Path, n: usize, size: usize, folds: usize) {
    ok(&hfcnet(&[
        "prepare",
        "--synthetic",
        &n.to_string(),
        "--roi-size",
        &size.to_string(),
        "--folds",
        &folds.to_string(),
        "--output-dir",
        p(dir),
    ]));
}

#[test]
fn prepare_partitions_subjects_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    prepare_synth(&a, 30, 16, 10);
    prepare_synth(&b, 30, 16, 10);
    let ma = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.json")).unwrap());
    let m = DatasetManifest::load(&a.join("manifest.json")).unwrap();
    for fold in 0..10 {
        assert_eq!(m.subjects_in(fold).len(), 3);
    }
    let run: RunManifest = serde_json::from_slice(&fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(run.command, "prepare");
    assert_eq!(run.config_hash.len(), 64);

    let out = hfcnet(&["prepare", "--synthetic", "5", "--roi-size", "16", "--folds", "10", "--output-dir", p(&a)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("folds"), "{}", stderr(&out));
}

#[test]
fn prepare_reports_failing_subjects() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    fs::create_dir_all(input.join("imagesTr")).unwrap();
    fs::create_dir_all(input.join("labelsTr")).unwrap();
    fs::write(input.join("imagesTr/broken.raw"), b"junk").unwrap();
    fs::write(input.join("labelsTr/broken.raw"), b"junk").unwrap();
    let out = hfcnet(&[
        "prepare",
        "--input-dir",
        p(&input),
        "--folds",
        "1",
        "--output-dir",
        p(&tmp.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("broken"), "{}", stderr(&out));
}

#[test]
fn train_resume_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    prepare_synth(&data, 20, 16, 4);
    let cfg = tmp.path().join("micro.toml");
    fs::write(&cfg, MICRO).unwrap();
    let run = tmp.path().join("run");

    let t0 = Instant::now();
    ok(&hfcnet(&["train", "--config", p(&cfg), "--data-dir", p(&data), "--out-dir", p(&run)]));
    assert!(t0.elapsed().as_secs() < 60);
    for f in ["best.ckpt", "last.ckpt", "history.jsonl", "config.toml", "run_manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let last = fs::read(run.join("last.ckpt")).unwrap();
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);

    // Resuming a finished run adds nothing.
    ok(&hfcnet(&["train", "--config", p(&cfg), "--data-dir", p(&data), "--out-dir", p(&run), "--resume"]));
    assert_eq!(fs::read(run.join("last.ckpt")).unwrap(), last);
    assert_eq!(fs::read_to_string(run.join("history.jsonl")).unwrap(), history);

    let ckpt = run.join("best.ckpt");
    let e1 = tmp.path().join("eval1");
    let e2 = tmp.path().join("eval2");
    // The data root can come from the environment.
    let out = Command::new(env!("CARGO_BIN_EXE_hfcnet"))
        .args(["eval", "--checkpoint", p(&ckpt), "--out-dir", p(&e1), "--cam"])
        .env("HFC_DATA_ROOT", &data)
        .output()
        .unwrap();
    ok(&out);
    ok(&hfcnet(&["eval", "--checkpoint", p(&ckpt), "--data-dir", p(&data), "--out-dir", p(&e2)]));
    assert_eq!(
        fs::read(e1.join("report.jsonl")).unwrap(),
        fs::read(e2.join("report.jsonl")).unwrap()
    );
    assert_eq!(fs::read(e1.join("roc.csv")).unwrap(), fs::read(e2.join("roc.csv")).unwrap());
    let pngs = fs::read_dir(e1.join("cam")).unwrap().count();
    assert_eq!(pngs, 5);

    // No validation subjects: empty report, still success.
    let e3 = tmp.path().join("eval3");
    let stdout = ok(&hfcnet(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data-dir",
        p(&data),
        "--split",
        "val",
        "--val-fraction",
        "0",
        "--out-dir",
        p(&e3),
    ]));
    assert!(stdout.contains("0 samples"), "{stdout}");
    let report = fs::read_to_string(e3.join("report.jsonl")).unwrap();
    assert!(report.contains("no samples"));

    // Data of another size does not fit the network.
    let other = tmp.path().join("data32");
    prepare_synth(&other, 8, 32, 2);
    let out = hfcnet(&["eval", "--checkpoint", p(&ckpt), "--data-dir", p(&other), "--out-dir", p(&e3)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("network"), "{}", stderr(&out));
}

#[test]
fn config_errors_are_user_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    prepare_synth(&data, 4, 16, 2);
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[model]\nchannels = [4, 8]\ndepth = 2\n[train]\nepochs = 1\n").unwrap();
    let out = hfcnet(&["train", "--config", p(&cfg), "--data-dir", p(&data), "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));

    fs::write(&cfg, "[model]\nchannels = [4, 8]\ndepth = 2\nwidth = 3\n[train]\nseed = 1\n").unwrap();
    let out = hfcnet(&["train", "--config", p(&cfg), "--data-dir", p(&data), "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("width"), "{}", stderr(&out));

    assert_eq!(hfcnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hfcnet(&["--help"]).status.code(), Some(0));
    let out = hfcnet(&["train", "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    prepare_synth(&data, 12, 16, 3);
    let cfg = tmp.path().join("micro.toml");
    fs::write(&cfg, MICRO.replace("epochs = 2", "epochs = 1")).unwrap();
    let out_dir = tmp.path().join("abl");
    ok(&hfcnet(&[
        "ablate",
        "--data-dir",
        p(&data),
        "--out-dir",
        p(&out_dir),
        "--rows",
        "baseline,full",
        "--seeds",
        "0",
        "--config",
        p(&cfg),
    ]));
    let table = fs::read_to_string(out_dir.join("ablation.md")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("| 1") || l.starts_with("| 2")).collect();
    assert_eq!(rows.len(), 2, "{table}");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("ablation.json")).unwrap()).unwrap();
    let hashes: Vec<&str> = json.as_array().unwrap().iter().map(|r| r["config_hash"].as_str().unwrap()).collect();
    assert_ne!(hashes[0], hashes[1]);
    assert!(out_dir.join("run_manifest.json").exists());

    let out = hfcnet(&["ablate", "--data-dir", p(&data), "--out-dir", p(&out_dir), "--rows", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn overfit_checkpoint_scores_high_on_its_training_split() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    // Two folds of five; fold 0 is held out, so training sees five slices.
    prepare_synth(&data, 10, 16, 2);
    let cfg = tmp.path().join("overfit.toml");
    fs::write(&cfg, OVERFIT).unwrap();
    let run = tmp.path().join("run");
    ok(&hfcnet(&[
        "train",
        "--config",
        p(&cfg),
        "--data-dir",
        p(&data),
        "--val-fraction",
        "0",
        "--out-dir",
        p(&run),
    ]));
    let stdout = ok(&hfcnet(&[
        "eval",
        "--checkpoint",
        p(&run.join("last.ckpt")),
        "--data-dir",
        p(&data),
        "--split",
        "train",
        "--val-fraction",
        "0",
        "--out-dir",
        p(&tmp.path().join("eval")),
    ]));
    let dsc: f64 = stdout
        .split("DSC ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .expect("DSC in output");
    assert!(dsc >= 0.95, "{stdout}");
}

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
train_plans = 2
demos_per_plan = 1
demo_frames = 60
encoder_epochs = 1
imitator_epochs = 10
isomap_points = 60
waynet_epochs = 1
worker_epochs = 1
eval_plans = 3
per_bin = 1
max_steps = 25
"#;

fn feudalnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feudalnav"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = feudalnav(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path, ext: &str) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn collect_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    std::fs::write(p("tiny.toml"), TINY).unwrap();

    ok(&["gen-suite", "--out", &p("suite"), "--count", "3", "--seed", "900"]);
    assert_eq!(files(&tmp.path().join("suite"), "plan").len(), 3);

    let said = ok(&["collect", "--config", &p("tiny.toml"), "--out", &p("demos")]);
    assert!(said.contains("wrote 2 demos"), "{said}");
    let demos = files(&tmp.path().join("demos"), "fdnv");
    assert_eq!(demos.len(), 2);
    let summary = ok(&["demo", "inspect", &demos[0].to_string_lossy()]);
    assert!(summary.contains("60"), "{summary}");

    ok(&["train", "--config", &p("tiny.toml"), "--demos", &p("demos"), "--out", &p("models")]);
    assert!(tmp.path().join("models/manifest.json").exists());

    for run in ["eval-a", "eval-b"] {
        let said = ok(&["eval", "--config", &p("tiny.toml"), "--models", &p("models"), "--suite", &p("suite"), "--out", &p(run)]);
        assert!(said.contains("n=6"), "{said}");
    }
    for name in ["episodes.csv", "report.csv", "report.txt", "traces-h-rgbd-m-cl.ndjson"] {
        let a = std::fs::read(tmp.path().join("eval-a").join(name)).unwrap();
        let b = std::fs::read(tmp.path().join("eval-b").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn ablate_needs_every_grid_network() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let models = tmp.path().join("models");
    ok(&["train", "--config", &cfg.to_string_lossy(), "--out", &models.to_string_lossy()]);
    let out = feudalnav(&["ablate", "--config", &cfg.to_string_lossy(), "--models", &models.to_string_lossy(), "--out", &tmp.path().join("o").to_string_lossy()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("waynet"));
}

#[test]
fn bad_inputs_fail_with_messages() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nwaynet_epoch = 3\n").unwrap();
    let out = feudalnav(&["collect", "--config", &cfg.to_string_lossy(), "--out", &tmp.path().join("d").to_string_lossy()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("waynet_epoch"));

    let junk = tmp.path().join("junk.fdnv");
    std::fs::write(&junk, b"not a demo").unwrap();
    let out = feudalnav(&["demo", "inspect", &junk.to_string_lossy()]);
    assert!(!out.status.success());

    let out = feudalnav(&["eval", "--models", &tmp.path().join("missing").to_string_lossy(), "--out", &tmp.path().join("o").to_string_lossy()]);
    assert!(!out.status.success());
}

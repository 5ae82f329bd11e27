use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn scnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scnet"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("SCNET_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const CONFIG: &str = r#"{
  "model": {"encoder_channels": [4, 8, 16, 32, 32]},
  "loss": {"reduction": "mean"},
  "train": {"learning_rate": 0.05, "max_iterations": 3, "batch_size": 2, "checkpoint_every": 0},
  "data": {"manifest": "data/manifest.json", "holdout": 0.25, "validation": 0.0,
           "augment": {"crop_size": 32}, "region": {"patch": 16}}
}"#;

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    ok(&scnet(dir.path(), &["synth", "--out", "data", "--count", "4", "--size", "48"]));
    dir
}

#[test]
fn synth_is_reproducible_and_records_its_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&scnet(dir.path(), &["synth", "--out", out, "--count", "2", "--size", "40", "--style", "concrete"]));
    }
    for f in ["images/synth_000.png", "masks/synth_001.png", "manifest.json", "run.json"] {
        let (a, b) = (dir.path().join("a").join(f), dir.path().join("b").join(f));
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), "{f}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_scnet"))
        .args(["synth", "--out", "c", "--count", "1", "--size", "40"])
        .current_dir(dir.path())
        .env("SCNET_SEED", "17")
        .output()
        .unwrap();
    ok(&out);
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("c/run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 17);
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = workspace();
    let d = dir.path();
    let bad_key = scnet(d, &["train", "--config", "cfg.json", "--out", "x", "--set", "train.lr=1"]);
    assert_eq!(bad_key.status.code(), Some(2));
    std::fs::write(d.join("broken.json"), r#"{"model": {"depth": 3}}"#).unwrap();
    assert_eq!(scnet(d, &["stats", "--config", "broken.json"]).status.code(), Some(2));
    let no_data = scnet(d, &["stats", "--config", "cfg.json", "--set", "data.manifest=\"missing.json\""]);
    assert_eq!(no_data.status.code(), Some(3));
    let diverged = scnet(d, &["train", "--config", "cfg.json", "--out", "x", "--set", "train.learning_rate=1e9"]);
    assert_eq!(diverged.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverged.stderr));
    let report = scnet(d, &["report", "--out", "r", "--run", "nowhere"]);
    assert_eq!(report.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&report.stderr).contains("nowhere/metrics.csv"));
}

#[test]
fn train_predict_and_report() {
    let dir = workspace();
    let d = dir.path();
    ok(&scnet(d, &["train", "--config", "cfg.json", "--out", "run"]));
    for f in ["model.ckpt", "history.csv", "run.json", "metrics.csv", "prc.csv"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }

    // 50×44 is not a multiple of the model's size step.
    let img = image::RgbImage::from_fn(50, 44, |x, y| image::Rgb([(x * 5) as u8, (y * 5) as u8, 90]));
    img.save(d.join("odd.png")).unwrap();
    ok(&scnet(
        d,
        &["predict", "--config", "cfg.json", "--out", "pred", "--checkpoint", "run/model.ckpt", "--threshold", "0.5", "odd.png"],
    ));
    let prob = image::open(d.join("pred/odd.prob.png")).unwrap();
    assert_eq!(prob.color(), image::ColorType::L16);
    assert_eq!((prob.width(), prob.height()), (50, 44));
    let mask = image::open(d.join("pred/odd.mask.png")).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (50, 44));
    assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    let overlay = image::open(d.join("pred/odd.overlay.png")).unwrap().to_rgb8();
    for (m, o) in mask.pixels().zip(overlay.pixels()) {
        if m.0[0] == 255 {
            assert_eq!(o.0, [255, 255, 0]);
        }
    }
    let prob16 = prob.to_luma16();
    for (p, m) in prob16.pixels().zip(mask.pixels()) {
        assert_eq!(f64::from(p.0[0]) / 65535.0 >= 0.5, m.0[0] == 255);
    }

    ok(&scnet(d, &["eval", "--config", "cfg.json", "--out", "ev", "--checkpoint", "run/model.ckpt"]));
    ok(&scnet(d, &["report", "--out", "rep", "--run", "run", "--run", "ev"]));
    for f in ["summary.csv", "error_breakdown.csv", "pr_curve.svg", "pr_curve.png"] {
        assert!(d.join("rep").join(f).is_file(), "{f}");
    }
    let svg = std::fs::read_to_string(d.join("rep/pr_curve.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(svg.matches("AUPRC=").count(), 2);
    let summary = std::fs::read_to_string(d.join("rep/summary.csv")).unwrap();
    assert!(summary.starts_with("schema,run,threshold"));
    assert!(summary.lines().skip(1).all(|l| l.starts_with("scnet-metrics-v1,")));
}

#[test]
fn training_twice_gives_identical_artifacts() {
    let dir = workspace();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(&scnet(d, &["train", "--config", "cfg.json", "--out", out]));
    }
    for f in ["model.ckpt", "history.csv", "run.json", "metrics.csv"] {
        assert_eq!(
            std::fs::read(d.join("a").join(f)).unwrap(),
            std::fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn threshold_is_stored_and_edges_feed_precomputed_mode() {
    let dir = workspace();
    let d = dir.path();
    ok(&scnet(d, &["train", "--config", "cfg.json", "--out", "run"]));
    ok(&scnet(d, &["threshold", "--config", "cfg.json", "--out", "th", "--checkpoint", "run/model.ckpt"]));
    let sweep = std::fs::read_to_string(d.join("th/threshold.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 100);
    assert!(d.join("th/model.ckpt").is_file());

    ok(&scnet(d, &["edges", "--config", "cfg.json", "--out", "ed"]));
    ok(&scnet(
        d,
        &[
            "stats",
            "--config",
            "cfg.json",
            "--out",
            "st",
            "--set",
            &format!("data.manifest=\"{}\"", d.join("ed/manifest.json").display()),
            "--set",
            "prior.mode=precomputed",
        ],
    ));
    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("st/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["samples"], 4);
}

use std::path::Path;
use std::process::{Command, Output};

const SMOKE: &str = r#"
seed = 3
checkpoint_every = 2
detections_per_object = 2

[synth]
num_objects = 500

[model]
latent_dim = 8
num_points = 64
backbone_channels = [32, 64, 128]

[train]
epochs = 4
folds = 2
samples = 30

[regressor]
num_points = 64
backbone_channels = [32, 64, 128]
epochs = 4
"#;

fn glenet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glenet"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn glenet")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = glenet(out, args);
    assert!(
        o.status.success(),
        "glenet {args:?} exited {:?}\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn pipeline_smoke_run_emits_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = dir.path().join("smoke.toml");
    std::fs::write(&cfg, SMOKE).unwrap();
    let c = cfg.to_str().unwrap();

    ok(&run, &["--config", c, "synth"]);
    ok(&run, &["--config", c, "train"]);
    assert!(run.join("checkpoints/epoch_0002.ckpt").exists());
    assert!(run.join("checkpoints/epoch_0004.ckpt").exists());
    let nll: f64 = ok(&run, &["--config", c, "eval-nll"]).trim().parse().unwrap();
    assert!(nll.is_finite());

    ok(&run, &["--config", c, "uncertainty"]);
    let text = std::fs::read_to_string(run.join("uncertainty.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 500);
    for l in &lines {
        let u = l["uncertainty"].as_array().expect("uncertainty array");
        assert_eq!(u.len(), 7);
        assert!(u.iter().all(|v| v.as_f64().unwrap() >= 0.0));
    }

    for mode in ["huber", "dirac", "glenet"] {
        ok(&run, &["--config", c, "probdet", "--mode", mode]);
    }
    let gt = run.join("dataset.jsonl");
    ok(&run, &["--config", c, "vote", "--dataset", gt.to_str().unwrap()]);
    assert!(run.join("merged_glenet.jsonl").exists());

    let printed = ok(&run, &["--config", c, "report"]);
    for table in [
        "losses.csv",
        "nll.csv",
        "loss_modes.csv",
        "uncertainty_dims.csv",
        "uncertainty_by_occlusion.csv",
        "voting.csv",
        "sampling_ablation.csv",
    ] {
        let path = run.join("report").join(table);
        assert!(path.exists(), "missing {table}");
        assert!(printed.contains(table));
        let mut rows = csv::Reader::from_path(&path).unwrap();
        assert!(rows.records().count() > 0, "{table} is empty");
    }
    assert!(run.join("report/losses.svg").exists());
    let modes = std::fs::read_to_string(run.join("report/loss_modes.csv")).unwrap();
    assert!(modes.starts_with("mode,seed,held_out_mean_iou,collapse_fraction,final_loss\n"));
}

#[test]
fn synth_is_deterministic_and_honours_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&a, &["--seed", "7", "synth"]);
    ok(&b, &["--seed", "7", "synth"]);
    ok(&c, &["--seed", "8", "synth"]);
    let read = |p: &Path| std::fs::read(p.join("dataset.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert!(a.join("run.log").exists());
}

#[test]
fn config_dump_spells_out_defaults_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dump = ok(dir.path(), &["config", "dump"]);
    for key in ["seed", "[synth]", "[model]", "[train]", "[regressor]", "[voting]", "[quality]", "sigma_t", "gamma"] {
        assert!(dump.contains(key), "dump lacks {key}");
    }
    let path = dir.path().join("dumped.toml");
    std::fs::write(&path, &dump).unwrap();
    assert_eq!(ok(dir.path(), &["--config", path.to_str().unwrap(), "config", "dump"]), dump);
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = 2\ngama = 1.0\n").unwrap();
    let o = glenet(&run, &["--config", bad.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gama"));

    let invalid = dir.path().join("invalid.toml");
    std::fs::write(&invalid, "[train]\nfolds = 1\n").unwrap();
    assert_eq!(glenet(&run, &["--config", invalid.to_str().unwrap(), "synth"]).status.code(), Some(2));

    let o = glenet(&run, &["train", "--dataset", dir.path().join("absent.jsonl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let broken = dir.path().join("broken.jsonl");
    std::fs::write(&broken, "{\"not\": \"a record\"}\n").unwrap();
    let o = glenet(&run, &["train", "--dataset", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    // glenet mode refuses a dataset without uncertainties
    ok(&run, &["synth"]);
    let o = glenet(&run, &["probdet", "--mode", "glenet", "--dataset", run.join("dataset.jsonl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

//! End-to-end checks of the `tbdl` binary and its exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn tbdl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbdl"))
        .args(args)
        .current_dir(dir)
        .env_remove("TBDL_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 10 TB + 10 Normal images split 6/2/2 per class.
fn toy(dir: &Path) {
    let o = tbdl(
        dir,
        &[
            "synth", "--out", "data", "--tb", "10", "--normal", "10", "--seed", "3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tbdl(
        dir,
        &[
            "split",
            "--data-dir",
            "data",
            "--out",
            "m.csv",
            "--seed",
            "1",
            "--train-per-class",
            "8",
            "--val-fraction",
            "0.25",
            "--test-tb",
            "2",
            "--test-normal",
            "2",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "train 6/6 val 2/2 test 2/2");
}

fn train_toy(dir: &Path, out: &str, epochs: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "--threads",
        "1",
        "train",
        "--arch",
        "squeezenet",
        "--manifest",
        "m.csv",
        "--epochs",
        epochs,
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    tbdl(dir, &args)
}

#[test]
fn help_exits_zero_without_touching_disk() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        &[][..],
        &["split"],
        &["train"],
        &["eval"],
        &["predict"],
        &["info"],
        &["synth"],
    ] {
        let mut args: Vec<&str> = sub.to_vec();
        args.push("--help");
        let o = tbdl(dir.path(), &args);
        assert_eq!(code(&o), 0, "{args:?}");
        assert!(stdout(&o).contains("Usage"));
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = tbdl(dir.path(), &["info", "--arch", "vgg"]);
    assert_eq!(code(&o), 1);
    for id in ["squeezenet", "resnet50"] {
        assert!(stderr(&o).contains(id), "{}", stderr(&o));
    }
    let o = tbdl(
        dir.path(),
        &[
            "train",
            "--arch",
            "vgg",
            "--manifest",
            "m.csv",
            "--out",
            "x",
        ],
    );
    assert_eq!(code(&o), 1);
    assert_eq!(code(&tbdl(dir.path(), &["frobnicate"])), 1);
    let o = tbdl(
        dir.path(),
        &[
            "train",
            "--arch",
            "squeezenet",
            "--manifest",
            "m.csv",
            "--out",
            "x",
            "--epochs",
            "0",
        ],
    );
    assert_eq!(code(&o), 1);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn split_layout_errors_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let first = std::fs::read(dir.path().join("m.csv")).unwrap();
    let o = tbdl(
        dir.path(),
        &[
            "--force",
            "split",
            "--data-dir",
            "data",
            "--out",
            "m.csv",
            "--seed",
            "1",
            "--train-per-class",
            "8",
            "--val-fraction",
            "0.25",
            "--test-tb",
            "2",
            "--test-normal",
            "2",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(first, std::fs::read(dir.path().join("m.csv")).unwrap());

    // existing output without --force
    let o = tbdl(
        dir.path(),
        &["split", "--data-dir", "data", "--out", "m.csv"],
    );
    assert_eq!(code(&o), 1);

    std::fs::create_dir_all(dir.path().join("half/TB")).unwrap();
    let o = tbdl(
        dir.path(),
        &["split", "--data-dir", "half", "--out", "h.csv"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Normal"));

    // the toy set cannot meet the default quotas
    let o = tbdl(
        dir.path(),
        &["split", "--data-dir", "data", "--out", "q.csv"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("TB"), "{}", stderr(&o));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    let o = train_toy(d, "sq.ckpt", "1", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.join("sq.ckpt").is_file());
    let history = std::fs::read_to_string(d.join("sq.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1);
    assert_eq!(history.lines().next().unwrap().split(',').count(), 5);

    let o = tbdl(
        d,
        &[
            "eval",
            "--model",
            "sq.ckpt",
            "--manifest",
            "m.csv",
            "--split",
            "test",
            "--report",
            "r.json",
            "--predictions",
            "p.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    let c = &report["confusion"];
    let total: u64 = ["tp", "fn", "fp", "tn"]
        .iter()
        .map(|k| c[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 4);
    for (row, key) in [
        ("Accuracy", "accuracy"),
        ("Precision", "precision"),
        ("Recall", "recall"),
        ("F1 Score", "f1"),
    ] {
        let pct = format!("{:.0}%", report[key].as_f64().unwrap() * 100.0);
        let line = table.lines().find(|l| l.starts_with(row)).unwrap();
        assert!(line.contains(&pct), "{line} vs {pct}");
    }

    // predict agrees with the per-image evaluation output
    let preds = std::fs::read_to_string(d.join("p.csv")).unwrap();
    for line in preds.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let o = tbdl(d, &["predict", "--model", "sq.ckpt", "--image", f[0]]);
        assert_eq!(code(&o), 0);
        let out = stdout(&o);
        let mut lines = out.lines();
        assert_eq!(lines.next().unwrap(), f[2]);
        let probs: Vec<f64> = lines
            .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
            .collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((probs[0] - f[3].parse::<f64>().unwrap()).abs() < 1e-6);
    }

    let o = tbdl(
        d,
        &["predict", "--model", "sq.ckpt", "--image", "missing.png"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.png"));

    let o = tbdl(
        d,
        &[
            "eval",
            "--model",
            "sq.ckpt",
            "--manifest",
            "m.csv",
            "--report",
            "r2.json",
            "--arch",
            "resnet50",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(!d.join("r2.json").exists());

    std::fs::write(d.join("junk.ckpt"), b"nope").unwrap();
    let o = tbdl(
        d,
        &[
            "eval",
            "--model",
            "junk.ckpt",
            "--manifest",
            "m.csv",
            "--report",
            "r3.json",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn identical_invocations_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    for out in ["a.ckpt", "b.ckpt"] {
        let o = train_toy(d, out, "2", &["--seed", "4"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_eq!(read("a.ckpt.history.csv"), read("b.ckpt.history.csv"));
}

#[test]
fn non_finite_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    let o = train_toy(d, "nan.ckpt", "3", &["--lr", "1e30", "--optimizer", "sgd"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn info_tables() {
    let dir = tempfile::tempdir().unwrap();
    let total = |text: &str| -> u64 {
        let line = text.lines().find(|l| l.starts_with("total")).unwrap();
        line.split_whitespace()
            .last()
            .unwrap()
            .replace(',', "")
            .parse()
            .unwrap()
    };
    let sq = stdout(&tbdl(dir.path(), &["info", "--arch", "squeezenet"]));
    let fire2 = sq.lines().find(|l| l.starts_with("fire2")).unwrap();
    assert!(fire2.ends_with("11,920"), "{fire2}");
    let rn = stdout(&tbdl(dir.path(), &["info", "--arch", "resnet50"]));
    let blocks = rn.lines().filter(|l| l.starts_with("layer")).count();
    assert_eq!(blocks, 16);
    assert_eq!(total(&sq), 736_450);
    assert_eq!(total(&rn), 23_512_130);
    assert!(total(&rn) >= 15 * total(&sq));
    assert_eq!(
        code(&tbdl(
            dir.path(),
            &["info", "--arch", "resnet50", "--bypass"]
        )),
        1
    );
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qproto(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qproto"))
        .args(args)
        .env("QPROTO_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The run directory is the last line printed on success.
fn run_dir(o: &Output) -> PathBuf {
    PathBuf::from(stdout(o).lines().last().expect("run dir printed").trim())
}

const TINY: &str = r#"{
  "dataset": {"kind": "synthetic", "n_classes": 16, "per_class": 8, "dim": 6, "spread": 0.2, "n_test": 6, "seed": 3},
  "head": "quantum", "n_qubits": 4, "n_way": 3, "k_shot": 2, "q_query": 2,
  "epochs": 2, "episodes_per_epoch": 6, "seed": 11, "hidden": [8],
  "eval_episodes": 5, "eval_n_way": 3, "eval_k_shot": 2, "eval_q_query": 2
}"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn missing_config_exits_1_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = qproto(dir.path(), &["train", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
}

#[test]
fn config_errors_are_listed_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TINY.replace(r#""n_way": 3"#, r#""n_way": 0"#).replace(r#""k_shot": 2,"#, r#""k_shot": 0,"#);
    let p = write(dir.path(), "bad.json", &bad);
    let o = qproto(dir.path(), &["train", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("n_way") && err.contains("k_shot"), "{err}");

    let p = write(dir.path(), "extra.json", &TINY.replace(r#""seed": 11"#, r#""seed": 11, "sede": 1"#));
    let o = qproto(dir.path(), &["train", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sede"));

    let o = qproto(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(fs::read_dir(dir.path()).unwrap().filter_map(Result::ok).all(|e| !e.path().is_dir()));
}

#[test]
fn unreadable_data_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "images", "not an idx file");
    write(dir.path(), "labels", "nor this");
    let manifest = write(
        dir.path(),
        "m.json",
        r#"{"path_images": "images", "path_labels": "labels", "image_side": 2, "n_classes": 10}"#,
    );
    let cfg = format!(
        r#"{{"dataset": {{"kind": "idx", "manifest": {:?}, "n_test": 5}},
            "head": "classical_euclidean", "n_qubits": 4, "n_way": 3, "k_shot": 1, "epochs": 1, "seed": 0}}"#,
        manifest
    );
    let p = write(dir.path(), "c.json", &cfg);
    let o = qproto(&dir.path().join("out"), &["train", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("images"));
}

#[test]
fn train_eval_diagnose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.json", TINY);
    let o = qproto(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = run_dir(&o);
    assert!(run.starts_with(dir.path()));
    for f in [
        "config.json",
        "seed",
        "run.json",
        "report.json",
        "metrics.csv",
        "best.ckpt",
        "best_head.json",
        "final.ckpt",
        "embeddings/epoch_000.csv",
        "embeddings/epoch_001.csv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["content_hash"].as_str().unwrap().len(), 64);
    let dump = fs::read_to_string(run.join("embeddings/epoch_001.csv")).unwrap();
    assert!(dump.starts_with("label,phi_0,phi_1,phi_2,phi_3\n"));
    // 6 test classes, 8 samples each
    assert_eq!(dump.lines().count(), 1 + 48);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let best = report["best_acc"].as_f64().unwrap();
    let o = qproto(dir.path(), &["eval", "--run", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&o).join("eval.json")).unwrap()).unwrap();
    // same checkpoint, same episodes as the in-training evaluation
    assert_eq!(eval["accuracy"].as_f64().unwrap(), best);

    let o = qproto(dir.path(), &["diagnose", "--run", run.to_str().unwrap(), "--per-class", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = run_dir(&o);
    let dis = fs::read_to_string(d.join("dissimilarity.csv")).unwrap();
    assert_eq!(dis.lines().count(), 1 + 18);
    let ev = fs::read_to_string(d.join("explained_variance.csv")).unwrap();
    assert!(ev.starts_with("component,ratio,cumulative\n"));
    assert_eq!(ev.lines().count(), 1 + 4);

    let o = qproto(dir.path(), &["eval", "--run", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("config.json"));
}

#[test]
fn thread_count_never_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.json", TINY);
    let runs: Vec<PathBuf> = ["1", "4"]
        .iter()
        .map(|t| {
            let o = qproto(dir.path(), &["--threads", t, "train", "--config", cfg.to_str().unwrap()]);
            assert!(o.status.success(), "{}", stderr(&o));
            run_dir(&o)
        })
        .collect();
    assert_ne!(runs[0], runs[1]);
    for f in ["metrics.csv", "best.ckpt", "embeddings/epoch_001.csv"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    // threads from the config file work too
    let cfg = write(dir.path(), "t2.json", &TINY.replace(r#""seed": 11"#, r#""seed": 11, "threads": 2"#));
    let o = qproto(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(run_dir(&o).join("metrics.csv")).unwrap(), fs::read(runs[0].join("metrics.csv")).unwrap());
}

#[test]
fn out_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let from_config = dir.path().join("from_config");
    let cfg = TINY.replace(
        r#""seed": 11"#,
        &format!(r#""seed": 11, "epochs": 0, "out_dir": {:?}"#, from_config),
    );
    let cfg = cfg.replace(r#""epochs": 2,"#, "");
    let p = write(dir.path(), "t.json", &cfg);
    let env_out = dir.path().join("env");
    let o = qproto(&env_out, &["train", "--config", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run_dir(&o).starts_with(&env_out));

    let flag = dir.path().join("flag");
    let o = qproto(&env_out, &["--out-dir", flag.to_str().unwrap(), "train", "--config", p.to_str().unwrap()]);
    assert!(run_dir(&o).starts_with(&flag));

    let o = Command::new(env!("CARGO_BIN_EXE_qproto"))
        .args(["train", "--config", p.to_str().unwrap()])
        .env_remove("QPROTO_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run_dir(&o).starts_with(&from_config));
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = qproto(dir.path(), &["verify", "--n", "3", "--trials", "6", "--seed", "7"]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.matches("PASS").count(), 9, "{out}");
    assert!(!out.contains("FAIL"));
    let csv = fs::read_to_string(run_dir(&o).join("verify.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn bench_width_is_flat_in_n() {
    let dir = tempfile::tempdir().unwrap();
    let o = qproto(dir.path(), &["bench", "--n", "4,8,16", "--l", "1,2", "--batch", "4", "--reps", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(run_dir(&o).join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,l,width,ms_per_amplitude"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 6);
    for l in ["1", "2"] {
        let widths: Vec<&str> = rows.iter().filter(|r| r[1] == l).map(|r| r[2].as_str()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{widths:?}");
    }
    let o = qproto(dir.path(), &["bench", "--n", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn lowdim_writes_maps_per_head() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "l.json", r#"{"task": "regress2", "size": 64, "epochs": 1, "seed": 2, "depth": 3, "hidden": 8}"#);
    let o = qproto(dir.path(), &["lowdim", "--config", p.to_str().unwrap(), "--resolution", "7", "--scatter", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = run_dir(&o);
    for h in 0..2 {
        let map = fs::read_to_string(run.join(format!("map_head{h}.csv"))).unwrap();
        assert_eq!(map.lines().count(), 1 + 49);
        assert!(map
            .lines()
            .skip(1)
            .all(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap().abs() <= 1.0 + 1e-12));
    }
    assert_eq!(fs::read_to_string(run.join("scatter.csv")).unwrap().lines().count(), 21);

    let p = write(dir.path(), "c.json", r#"{"task": "classify", "size": 32, "epochs": 1, "seed": 2, "depth": 2}"#);
    let o = qproto(dir.path(), &["lowdim", "--config", p.to_str().unwrap(), "--resolution", "3", "--scatter", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run_dir(&o).join("map.csv").is_file());
}

#[test]
fn sweep_range_zero_matches_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.json", TINY);
    let o = qproto(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    let plain = fs::read(run_dir(&o).join("metrics.csv")).unwrap();

    let o = qproto(dir.path(), &["sweep", "--config", cfg.to_str().unwrap(), "--ranges", "0,0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = run_dir(&o);
    let csv = fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    let subruns: Vec<PathBuf> = fs::read_dir(run.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(subruns.len(), 2);
    assert!(subruns.iter().any(|r| fs::read(r.join("metrics.csv")).unwrap() == plain));

    let o = qproto(dir.path(), &["sweep", "--config", cfg.to_str().unwrap(), "--ranges", "7"]);
    assert_eq!(o.status.code(), Some(1));
}
